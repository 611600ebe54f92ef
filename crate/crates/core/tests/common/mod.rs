//! Brute-force oracles and fixture generators shared by the integration
//! tests and the acceptance run.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use kgtod::data::{BeliefState, DbResult, DialogAct, SlotValue, Speaker};
use kgtod::retrieval::{terms, Article, KnowledgeSnippet, SnippetId};
use kgtod::seqfmt::{Decision, Utterance};

// ---------------------------------------------------------------------------
// Metric oracles. Texts are whitespace-tokenized lowercase words, values are
// already normalized, so no tokenizer is needed here.

pub fn triples(b: &BeliefState) -> Vec<(String, String, String)> {
    let mut v: Vec<_> = b.iter().map(|s| (s.domain, s.slot, s.value)).collect();
    v.sort();
    v
}

pub fn joint_ga(p: &[BeliefState], g: &[BeliefState]) -> Option<f64> {
    if g.is_empty() {
        return None;
    }
    let mut hit = 0.0;
    for i in 0..g.len() {
        if triples(&p[i]) == triples(&g[i]) {
            hit += 1.0;
        }
    }
    Some(hit / g.len() as f64)
}

pub fn avg_ga(p: &[BeliefState], g: &[BeliefState]) -> Option<f64> {
    let (mut hit, mut total) = (0.0, 0.0);
    for i in 0..g.len() {
        for (d, s, v) in triples(&g[i]) {
            total += 1.0;
            if triples(&p[i]).iter().any(|(pd, ps, pv)| *pd == d && *ps == s && *pv == v) {
                hit += 1.0;
            }
        }
    }
    (total > 0.0).then(|| hit / total)
}

fn f1(tp: f64, fp: f64, fn_: f64) -> f64 {
    if tp + fp + fn_ == 0.0 {
        return 1.0;
    }
    if tp == 0.0 {
        return 0.0;
    }
    let (p, r) = (tp / (tp + fp), tp / (tp + fn_));
    2.0 * p * r / (p + r)
}

pub fn act_slot_f1(p: &[Vec<DialogAct>], g: &[Vec<DialogAct>]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for i in 0..g.len() {
        let mut gold: Vec<(String, Option<String>)> = g[i].iter().map(|a| (a.act.clone(), a.slot.clone())).collect();
        for a in &p[i] {
            let key = (a.act.clone(), a.slot.clone());
            match gold.iter().position(|x| *x == key) {
                Some(j) => {
                    gold.remove(j);
                    tp += 1.0;
                }
                None => fp += 1.0,
            }
        }
        fn_ += gold.len() as f64;
    }
    f1(tp, fp, fn_)
}

fn count(hay: &[Vec<&str>], g: &[&str]) -> usize {
    hay.iter().filter(|x| x.as_slice() == g).count()
}

pub fn bleu4(c: &[String], r: &[String]) -> Option<f64> {
    if c.is_empty() {
        return None;
    }
    let (mut m, mut t) = ([0.0f64; 4], [0.0f64; 4]);
    let (mut clen, mut rlen) = (0.0, 0.0);
    for i in 0..c.len() {
        let cw: Vec<&str> = c[i].split_whitespace().collect();
        let rw: Vec<&str> = r[i].split_whitespace().collect();
        clen += cw.len() as f64;
        rlen += rw.len() as f64;
        for n in 1..=4 {
            let cg: Vec<Vec<&str>> = (0..(cw.len() + 1).saturating_sub(n)).map(|k| cw[k..k + n].to_vec()).collect();
            let rg: Vec<Vec<&str>> = (0..(rw.len() + 1).saturating_sub(n)).map(|k| rw[k..k + n].to_vec()).collect();
            t[n - 1] += cg.len() as f64;
            let mut seen: Vec<&Vec<&str>> = Vec::new();
            for g in &cg {
                if !seen.contains(&g) {
                    seen.push(g);
                    m[n - 1] += count(&cg, g).min(count(&rg, g)) as f64;
                }
            }
        }
    }
    if clen == 0.0 || m.contains(&0.0) {
        return Some(0.0);
    }
    let p: f64 = (0..4).map(|i| m[i] / t[i]).product();
    let bp = if clen > rlen { 1.0 } else { (1.0 - rlen / clen).exp() };
    Some(bp * p.powf(0.25))
}

pub fn selection_recall(s: &[Vec<SnippetId>], g: &[Vec<SnippetId>]) -> Option<f64> {
    if g.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..g.len() {
        let mut gold = g[i].clone();
        gold.sort();
        gold.dedup();
        sum += gold.iter().filter(|x| s[i].contains(x)).count() as f64 / gold.len() as f64;
    }
    Some(sum / g.len() as f64)
}

pub fn decision_f1(p: &[Decision], g: &[Decision]) -> f64 {
    let c = Decision::Chitchat;
    let tp = p.iter().zip(g).filter(|(a, b)| **a == c && **b == c).count() as f64;
    let fp = p.iter().zip(g).filter(|(a, b)| **a == c && **b != c).count() as f64;
    let fn_ = p.iter().zip(g).filter(|(a, b)| **a != c && **b == c).count() as f64;
    f1(tp, fp, fn_)
}

// ---------------------------------------------------------------------------
// Random fixtures.

const WORDS: &[&str] =
    &["the", "a", "table", "at", "noon", "for", "two", "is", "booked", "hotel", "red", "fun", "city", "and"];
const DOMAINS: &[&str] = &["hotels", "movies", "restaurants"];
const SLOTS: &[&str] = &["city", "date", "name", "time", "count"];
const VALUES: &[&str] = &["boston", "today", "golden lotus", "6 pm", "2", "3"];
const ACTS: &[&str] = &["INFORM", "REQUEST", "OFFER", "CONFIRM", "GOODBYE"];

pub fn sentence(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn belief(rng: &mut ChaCha8Rng) -> BeliefState {
    (0..rng.gen_range(0..5))
        .map(|_| {
            SlotValue::new(*DOMAINS.choose(rng).unwrap(), *SLOTS.choose(rng).unwrap(), *VALUES.choose(rng).unwrap())
        })
        .collect()
}

pub fn acts(rng: &mut ChaCha8Rng) -> Vec<DialogAct> {
    (0..rng.gen_range(0..4))
        .map(|_| {
            let act = *ACTS.choose(rng).unwrap();
            match rng.gen_range(0..3) {
                0 => DialogAct::new(act),
                1 => DialogAct::with_slot(act, SLOTS.choose(rng).unwrap()),
                _ => DialogAct::with_value(act, SLOTS.choose(rng).unwrap(), VALUES.choose(rng).unwrap()),
            }
        })
        .collect()
}

pub fn snippet_id(rng: &mut ChaCha8Rng) -> SnippetId {
    SnippetId::new(["a", "b"].choose(rng).unwrap(), rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(0..3))
}

pub fn decision(rng: &mut ChaCha8Rng) -> Decision {
    Decision::from_flag(rng.gen_bool(0.3))
}

/// Free text that exercises the grammar's reserved characters.
pub fn raw_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &["a", "b", " ", "<", "\\", ";", "=", ",", "|", ">", "<|belief|>", "<chitchat>", "é", "7"];
    (0..rng.gen_range(0..12)).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

fn ident(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(1..8)).map(|_| *b"abcdefgh_".choose(rng).unwrap() as char).collect()
}

/// One random structured turn, as owned parts of a `TurnInput`.
pub struct RandomTurn {
    pub context: Vec<Utterance>,
    pub belief: BeliefState,
    pub db: Option<DbResult>,
    pub acts: Vec<DialogAct>,
    pub knowledge: Vec<KnowledgeSnippet>,
    pub decision: Decision,
    pub response: String,
}

pub fn random_turn(rng: &mut ChaCha8Rng) -> RandomTurn {
    let context = (0..rng.gen_range(0..5))
        .map(|_| Utterance::new(if rng.gen_bool(0.5) { Speaker::User } else { Speaker::System }, raw_text(rng)))
        .collect();
    let belief = (0..rng.gen_range(0..5)).map(|_| SlotValue::new(ident(rng), ident(rng), raw_text(rng))).collect();
    let db = rng.gen_bool(0.6).then(|| {
        // The D segment carries the first record only.
        let records: Vec<std::collections::BTreeMap<String, String>> = (0..rng.gen_range(0..2))
            .map(|_| (0..rng.gen_range(1..3)).map(|_| (ident(rng), raw_text(rng))).collect())
            .collect();
        DbResult { service: ident(rng), match_count: records.len() + rng.gen_range(0..20), records }
    });
    let acts = (0..rng.gen_range(0..5))
        .map(|_| {
            let act: String = (0..rng.gen_range(1..8)).map(|_| *b"ABCDE_".choose(rng).unwrap() as char).collect();
            if rng.gen_bool(0.3) {
                DialogAct { act, slot: None, values: vec![] }
            } else {
                DialogAct {
                    act,
                    slot: Some(ident(rng)),
                    values: (0..rng.gen_range(0..3)).map(|_| raw_text(rng)).collect(),
                }
            }
        })
        .collect();
    let knowledge = (0..3)
        .map(|i| KnowledgeSnippet { id: SnippetId::new("e", 0, 0, i), text: raw_text(rng), source_title: "E".into() })
        .collect();
    RandomTurn { context, belief, db, acts, knowledge, decision: decision(rng), response: raw_text(rng) }
}

// ---------------------------------------------------------------------------
// Planted retrieval corpus and a dense tf-idf oracle.

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "ren", "to", "sa", "vel", "dor", "quin", "bra", "zu", "fen"];
const FILLER: &[&str] = &[
    "river", "market", "festival", "old", "new", "bridge", "garden", "music", "town", "visitors", "famous", "local",
    "food", "history", "north", "south", "built", "known", "museum", "square",
];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let mut w: String = (0..3).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
    w[..1].make_ascii_uppercase();
    w
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect::<Vec<_>>().join(" ") + "."
}

/// `n_articles` articles; the first `entities.len()` are planted, one per
/// entity, the rest are filler that occasionally mention an entity.
pub fn planted_corpus(
    rng: &mut ChaCha8Rng,
    n_entities: usize,
    n_articles: usize,
) -> (Vec<kgtod::data::Entity>, Vec<Article>) {
    let mut names = std::collections::BTreeSet::new();
    while names.len() < n_entities {
        names.insert(format!("{} {}", pseudo_word(rng), pseudo_word(rng)));
    }
    let names: Vec<String> = names.into_iter().collect();
    let entities: Vec<_> = names.iter().map(|n| kgtod::data::Entity::new(n.clone(), "restaurants")).collect();
    let mut corpus: Vec<Article> = names
        .iter()
        .map(|n| {
            let f1 = filler(rng, 8);
            let f2 = filler(rng, 6);
            Article::new(n.clone(), vec![format!("{n} is a restaurant. {f1}"), format!("{f2} {n} opened long ago.")])
        })
        .collect();
    for i in corpus.len()..n_articles {
        let mut p = filler(rng, 12);
        if rng.gen_bool(0.2) {
            let other = names.choose(rng).unwrap();
            p = format!("{p} Visitors from {} came.", other.split(' ').next().unwrap());
        }
        corpus.push(Article::new(format!("Filler {i}"), vec![p, filler(rng, 10)]));
    }
    (entities, corpus)
}

fn doc_text(a: &Article) -> String {
    std::iter::once(a.title.clone()).chain(a.paragraphs.iter().cloned()).collect::<Vec<_>>().join("\n")
}

/// Cosine of dense `(1 + ln tf) * max(0, ln((N-df+.5)/(df+.5)))` vectors,
/// recomputed from scratch for every document.
pub fn tfidf_oracle(corpus: &[Article], query: &str) -> Vec<f64> {
    let docs: Vec<Vec<String>> = corpus.iter().map(|a| terms(&doc_text(a))).collect();
    let q = terms(query);
    let n = docs.len() as f64;
    let mut vocab: Vec<String> = docs.iter().flatten().cloned().collect();
    vocab.sort();
    vocab.dedup();
    let idf = |t: &String| {
        let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    };
    let idfs: Vec<f64> = vocab.iter().map(idf).collect();
    let vec_of = |toks: &[String]| -> Vec<f64> {
        vocab
            .iter()
            .zip(&idfs)
            .map(|(t, w)| {
                let c = toks.iter().filter(|x| *x == t).count();
                if c == 0 {
                    0.0
                } else {
                    (1.0 + (c as f64).ln()) * w
                }
            })
            .collect()
    };
    let qv = vec_of(&q);
    let qn = qv.iter().map(|x| x * x).sum::<f64>().sqrt();
    docs.iter()
        .map(|d| {
            let dv = vec_of(d);
            let dn = dv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if qn == 0.0 || dn == 0.0 {
                0.0
            } else {
                qv.iter().zip(&dv).map(|(a, b)| a * b).sum::<f64>() / (qn * dn)
            }
        })
        .collect()
}
