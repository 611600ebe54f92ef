//! Ranking candidate snippets for enrichment.
//!
//! Both rankers score each candidate against the recent context (by default
//! the last user and system utterances). The lexical ranker uses tf-idf
//! cosine with document frequencies taken over the candidate pool. The
//! trained ranker is a logistic regression over four features; see
//! [`FEATURES`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::retrieval::{KnowledgeSnippet, SnippetId};
use crate::text::{contains_phrase, is_punctuation, lower_tokens};

pub const TOP_K: usize = 3;
pub const CONTEXT_WINDOW: usize = 2;
pub const RANKER_VERSION: u32 = 1;
pub const FEATURES: [&str; 4] = ["log_overlap", "cosine", "log_length", "entity_mention"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSnippet {
    pub snippet: KnowledgeSnippet,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Feature standardization fitted on the training set.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LinearScorer {
    fn score(&self, f: &[f64]) -> f64 {
        self.bias
            + f.iter()
                .zip(&self.weights)
                .zip(self.mean.iter().zip(&self.std))
                .map(|((x, w), (m, s))| w * (x - m) / s)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RankerModel {
    Lexical,
    Trained(LinearScorer),
}

#[derive(Serialize, Deserialize)]
struct RankerFile {
    version: u32,
    model: RankerModel,
}

impl RankerModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&RankerFile { version: RANKER_VERSION, model: self.clone() })
            .map_err(|e| CoreError::Serialization(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let f: RankerFile =
            serde_json::from_str(&text).map_err(|e| CoreError::Serialization(format!("{}: {e}", path.display())))?;
        if f.version != RANKER_VERSION {
            return Err(CoreError::Serialization(format!("ranker version {} (expected {RANKER_VERSION})", f.version)));
        }
        if let RankerModel::Trained(s) = &f.model {
            let ok =
                s.weights.len() == FEATURES.len() && s.mean.len() == FEATURES.len() && s.std.len() == FEATURES.len();
            let finite = s.weights.iter().chain(&s.mean).chain(&s.std).all(|x| x.is_finite()) && s.bias.is_finite();
            if !ok || !finite || s.std.iter().any(|&x| x <= 0.0) {
                return Err(CoreError::Serialization("malformed ranker parameters".into()));
            }
        }
        Ok(f.model)
    }
}

fn words(text: &str) -> Vec<String> {
    lower_tokens(text).into_iter().filter(|t| !is_punctuation(t)).collect()
}

fn counts(ws: &[String]) -> BTreeMap<&str, f64> {
    let mut m = BTreeMap::new();
    for w in ws {
        *m.entry(w.as_str()).or_insert(0.0) += 1.0;
    }
    m
}

/// The last `window` utterances.
pub fn recent_context(utterances: &[String], window: usize) -> &[String] {
    &utterances[utterances.len().saturating_sub(window)..]
}

/// Tokenized context and candidates with pool document frequencies.
struct Pool {
    context: Vec<String>,
    docs: Vec<Vec<String>>,
    df: BTreeMap<String, usize>,
}

impl Pool {
    fn new(context: &[String], candidates: &[KnowledgeSnippet]) -> Self {
        let context = words(&context.join(" "));
        let docs: Vec<Vec<String>> = candidates.iter().map(|c| words(&c.text)).collect();
        let mut df = BTreeMap::new();
        for d in &docs {
            for w in d.iter().collect::<BTreeSet<_>>() {
                *df.entry(w.clone()).or_insert(0) += 1;
            }
        }
        Pool { context, docs, df }
    }

    /// `ln((1 + N) / (1 + df)) + 1`.
    fn idf(&self, w: &str) -> f64 {
        let n = self.docs.len() as f64;
        ((1.0 + n) / (1.0 + *self.df.get(w).unwrap_or(&0) as f64)).ln() + 1.0
    }

    fn cosine(&self, i: usize) -> f64 {
        let q = counts(&self.context);
        let d = counts(&self.docs[i]);
        let weigh = |m: &BTreeMap<&str, f64>| -> BTreeMap<String, f64> {
            m.iter().map(|(w, c)| (w.to_string(), c * self.idf(w))).collect()
        };
        let (q, d) = (weigh(&q), weigh(&d));
        let norm = |m: &BTreeMap<String, f64>| m.values().map(|x| x * x).sum::<f64>().sqrt();
        let (nq, nd) = (norm(&q), norm(&d));
        if nq == 0.0 || nd == 0.0 {
            return 0.0;
        }
        q.iter().filter_map(|(w, x)| d.get(w).map(|y| x * y)).sum::<f64>() / (nq * nd)
    }

    fn features(&self, i: usize, entity: &str) -> [f64; 4] {
        let ctx: BTreeSet<&String> = self.context.iter().collect();
        let doc: BTreeSet<&String> = self.docs[i].iter().collect();
        let overlap = ctx.intersection(&doc).count() as f64;
        let name = words(entity);
        let mention = contains_phrase(&self.context, &name) && contains_phrase(&self.docs[i], &name);
        [overlap.ln_1p(), self.cosine(i), (self.docs[i].len() as f64).ln_1p(), if mention { 1.0 } else { 0.0 }]
    }
}

/// Feature vectors of every candidate in `FEATURES` order.
pub fn feature_matrix(context: &[String], candidates: &[KnowledgeSnippet]) -> Vec<[f64; 4]> {
    let pool = Pool::new(context, candidates);
    (0..candidates.len()).map(|i| pool.features(i, &candidates[i].id.entity)).collect()
}

fn order(a: &RankedSnippet, b: &RankedSnippet) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.snippet.id.cmp(&b.snippet.id))
        .then_with(|| a.snippet.text.cmp(&b.snippet.text))
}

/// Scores and sorts `candidates` against `context` (already windowed).
pub fn rank(model: &RankerModel, context: &[String], candidates: &[KnowledgeSnippet]) -> Result<Vec<RankedSnippet>> {
    if candidates.is_empty() {
        return Err(CoreError::Contract("ranking needs at least one candidate".into()));
    }
    let pool = Pool::new(context, candidates);
    let mut out: Vec<RankedSnippet> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let score = match model {
                RankerModel::Lexical => pool.cosine(i),
                RankerModel::Trained(s) => s.score(&pool.features(i, &c.id.entity)),
            };
            RankedSnippet { snippet: c.clone(), score }
        })
        .collect();
    out.sort_by(order);
    Ok(out)
}

pub fn select_top(ranked: &[RankedSnippet], k: usize) -> Vec<KnowledgeSnippet> {
    ranked.iter().take(k).map(|r| r.snippet.clone()).collect()
}

/// Uniformly random selection, the floor for ranker comparisons.
pub fn random_top(candidates: &[KnowledgeSnippet], k: usize, rng: &mut impl Rng) -> Vec<KnowledgeSnippet> {
    rand::seq::index::sample(rng, candidates.len(), k.min(candidates.len()))
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect()
}

/// One enriched turn: its context window, candidate pool and gold ids.
#[derive(Debug, Clone)]
pub struct RankExample {
    pub context: Vec<String>,
    pub candidates: Vec<KnowledgeSnippet>,
    pub gold: Vec<SnippetId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerConfig {
    pub epochs: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self { epochs: 300, l2: 1e-3, learning_rate: 1.0, seed: 0 }
    }
}

/// Mean logistic loss plus `l2/2 · |w|²` and its gradient. `params` is the
/// weights followed by the bias; rows of `x` are standardized features.
pub fn logistic_loss_grad(params: &[f64], x: &[Vec<f64>], y: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let nf = params.len() - 1;
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (row, &t) in x.iter().zip(y) {
        let z = params[nf] + row.iter().zip(params).map(|(a, w)| a * w).sum::<f64>();
        // log(1 + e^z) - t z, computed stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let p = 1.0 / (1.0 + (-z).exp());
        for j in 0..nf {
            grad[j] += (p - t) * row[j];
        }
        grad[nf] += p - t;
    }
    loss /= n;
    for g in &mut grad {
        *g /= n;
    }
    for j in 0..nf {
        loss += 0.5 * l2 * params[j] * params[j];
        grad[j] += l2 * params[j];
    }
    (loss, grad)
}

/// Training result with the per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct TrainedRanker {
    pub model: RankerModel,
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent with step halving, so the loss never rises.
pub fn train_ranker(examples: &[RankExample], config: &RankerConfig) -> Result<TrainedRanker> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for ex in examples.iter().filter(|e| !e.candidates.is_empty()) {
        let ctx = recent_context(&ex.context, CONTEXT_WINDOW);
        for (f, c) in feature_matrix(ctx, &ex.candidates).into_iter().zip(&ex.candidates) {
            x.push(f.to_vec());
            y.push(if ex.gold.contains(&c.id) { 1.0 } else { 0.0 });
        }
    }
    let pos = y.iter().filter(|&&t| t == 1.0).count();
    if pos == 0 || pos == y.len() {
        return Err(CoreError::Training("ranker training data must contain both labels".into()));
    }
    let nf = FEATURES.len();
    let mean: Vec<f64> = (0..nf).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / x.len() as f64).collect();
    let std: Vec<f64> = (0..nf)
        .map(|j| {
            let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / x.len() as f64;
            if v > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for r in &mut x {
        for j in 0..nf {
            r[j] = (r[j] - mean[j]) / std[j];
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params: Vec<f64> = (0..=nf).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let (mut loss, mut grad) = logistic_loss_grad(&params, &x, &y, config.l2);
    let mut lr = config.learning_rate;
    let mut losses = vec![loss];
    for _ in 0..config.epochs {
        loop {
            let trial: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
            let (l, g) = logistic_loss_grad(&trial, &x, &y, config.l2);
            if l <= loss {
                (params, loss, grad) = (trial, l, g);
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
        }
        losses.push(loss);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(CoreError::Training("ranker parameters diverged".into()));
    }
    let bias = params.pop().unwrap();
    Ok(TrainedRanker { model: RankerModel::Trained(LinearScorer { weights: params, bias, mean, std }), losses })
}
