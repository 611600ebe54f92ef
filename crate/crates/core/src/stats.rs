//! Dataset statistics.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Dialogue;
use crate::text::{normalize_value, tokenize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dialogues: usize,
    /// Distinct lowercased tokens over all turn texts.
    pub vocabulary: usize,
    pub turns: usize,
    pub enriched_turns: usize,
    /// Distinct normalized entity names across the dataset.
    pub entities: usize,
    /// Distinct snippet texts across the dataset.
    pub snippets: usize,
    pub avg_turns: Option<f64>,
    pub avg_enriched_tokens: Option<f64>,
    pub avg_entities: Option<f64>,
    pub avg_snippets: Option<f64>,
    pub enriched_fraction: Option<f64>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

pub fn dataset_stats(ds: &[Dialogue]) -> DatasetStats {
    let mut vocab = BTreeSet::new();
    let mut entities = BTreeSet::new();
    let mut snippets = BTreeSet::new();
    let (mut turns, mut enriched, mut enriched_tokens, mut entity_mentions, mut snippet_mentions) = (0, 0, 0, 0, 0);
    for d in ds {
        turns += d.turns.len();
        for t in &d.turns {
            let text = t.text().to_lowercase();
            let toks = tokenize(&text);
            if t.enriched {
                enriched += 1;
                enriched_tokens += toks.len();
            }
            vocab.extend(toks.into_iter().map(str::to_string));
        }
        entity_mentions += d.entities.len();
        entities.extend(d.entities.iter().map(|e| normalize_value(&e.name)));
        snippet_mentions += d.knowledge.len();
        snippets.extend(d.knowledge.iter().map(|k| k.text.as_str()));
    }
    DatasetStats {
        dialogues: ds.len(),
        vocabulary: vocab.len(),
        turns,
        enriched_turns: enriched,
        entities: entities.len(),
        snippets: snippets.len(),
        avg_turns: ratio(turns, ds.len()),
        avg_enriched_tokens: ratio(enriched_tokens, enriched),
        avg_entities: ratio(entity_mentions, ds.len()),
        avg_snippets: ratio(snippet_mentions, ds.len()),
        enriched_fraction: ratio(enriched, turns),
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let avg = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let rows = [
            ("Dialogues", self.dialogues.to_string()),
            ("Vocabulary", self.vocabulary.to_string()),
            ("All turns", self.turns.to_string()),
            ("Turns enriched with chit-chat", self.enriched_turns.to_string()),
            ("All entities", self.entities.to_string()),
            ("All knowledge snippets", self.snippets.to_string()),
            ("Avg. # turns per dialogue", avg(self.avg_turns)),
            ("Avg. # tokens in enriched responses", avg(self.avg_enriched_tokens)),
            ("Avg. # entities per dialogue", avg(self.avg_entities)),
            ("Avg. # knowledge snippets per dialogue", avg(self.avg_snippets)),
            ("Enriched fraction of turns", avg(self.enriched_fraction)),
        ];
        for (k, v) in rows {
            writeln!(f, "{k:<40} {v:>10}")?;
        }
        Ok(())
    }
}
