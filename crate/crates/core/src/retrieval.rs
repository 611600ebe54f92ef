//! TF-IDF article retrieval over a local corpus and sentence-level snippet
//! chunking.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::Entity;
use crate::error::{CoreError, Result};
use crate::text::{is_punctuation, lower_tokens, normalize_value};

pub const ARTICLES_PER_QUERY: usize = 2;
pub const PARAGRAPHS_PER_ARTICLE: usize = 2;

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "sr", "jr", "vs", "etc", "inc", "ltd", "co", "no", "mt", "ft", "jan", "feb",
    "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "u.s", "e.g", "i.e",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub title: String,
    pub paragraphs: Vec<String>,
}

impl Article {
    pub fn new(title: impl Into<String>, paragraphs: Vec<String>) -> Self {
        Self { title: title.into(), paragraphs }
    }
}

/// `(entity, article rank, paragraph, sentence)`, written `entity#a.p.s`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SnippetId {
    pub entity: String,
    pub article: usize,
    pub paragraph: usize,
    pub sentence: usize,
}

impl SnippetId {
    pub fn new(entity: &str, article: usize, paragraph: usize, sentence: usize) -> Self {
        Self { entity: entity.to_string(), article, paragraph, sentence }
    }
}

impl fmt::Display for SnippetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}.{}.{}", self.entity, self.article, self.paragraph, self.sentence)
    }
}

impl FromStr for SnippetId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("malformed snippet id {s:?}");
        let (entity, idx) = s.rsplit_once('#').ok_or_else(bad)?;
        let parts: Vec<usize> =
            idx.split('.').map(|p| p.parse().map_err(|_| bad())).collect::<std::result::Result<_, _>>()?;
        match parts[..] {
            [a, p, n] => Ok(SnippetId::new(entity, a, p, n)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for SnippetId {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<SnippetId> for String {
    fn from(id: SnippetId) -> String {
        id.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSnippet {
    pub id: SnippetId,
    pub text: String,
    pub source_title: String,
}

/// Lowercased unigrams and adjacent bigrams, punctuation dropped.
pub fn terms(text: &str) -> Vec<String> {
    let words: Vec<String> = lower_tokens(text).into_iter().filter(|t| !is_punctuation(t)).collect();
    let mut out = words.clone();
    out.extend(words.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    out
}

pub fn tf(count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        1.0 + (count as f64).ln()
    }
}

/// Clamped BM25-style inverse document frequency.
pub fn idf(n_docs: usize, doc_freq: usize) -> f64 {
    let (n, df) = (n_docs as f64, doc_freq as f64);
    ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
}

fn counts(terms: Vec<String>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in terms {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Inverted TF-IDF index over article text (title plus all paragraphs).
#[derive(Debug)]
pub struct CorpusIndex {
    articles: Vec<Article>,
    vocab: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    /// term id -> (doc, weight), doc ascending.
    postings: Vec<Vec<(usize, f64)>>,
    doc_norm: Vec<f64>,
    queries: AtomicUsize,
}

impl CorpusIndex {
    pub fn build(corpus: Vec<Article>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(CoreError::Config("cannot index an empty corpus".into()));
        }
        let mut seen = HashSet::new();
        for a in &corpus {
            if !seen.insert(a.title.as_str()) {
                return Err(CoreError::Config(format!("duplicate article title {:?}", a.title)));
            }
            if a.paragraphs.is_empty() {
                return Err(CoreError::Config(format!("article {:?} has no paragraphs", a.title)));
            }
        }
        let doc_counts: Vec<BTreeMap<String, usize>> =
            corpus.iter().map(|a| counts(terms(&document_text(a)))).collect();
        let mut vocab = HashMap::new();
        let mut doc_freq = Vec::new();
        // BTreeMap iteration makes term ids a pure function of the corpus.
        for dc in &doc_counts {
            for term in dc.keys() {
                let id = *vocab.entry(term.clone()).or_insert_with(|| {
                    doc_freq.push(0);
                    doc_freq.len() - 1
                });
                doc_freq[id] += 1;
            }
        }
        let n = corpus.len();
        let mut postings = vec![Vec::new(); doc_freq.len()];
        let mut doc_norm = vec![0.0; n];
        for (d, dc) in doc_counts.iter().enumerate() {
            for (term, &c) in dc {
                let id = vocab[term];
                let w = tf(c) * idf(n, doc_freq[id]);
                doc_norm[d] += w * w;
                postings[id].push((d, w));
            }
            doc_norm[d] = doc_norm[d].sqrt();
        }
        Ok(Self { articles: corpus, vocab, doc_freq, postings, doc_norm, queries: AtomicUsize::new(0) })
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    /// Distinct indexed terms.
    pub fn terms(&self) -> usize {
        self.vocab.len()
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.vocab.get(term).map_or(0, |&i| self.doc_freq[i])
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.len(), self.doc_freq(term))
    }

    /// Stored weight of `term` in document `doc` (0 if absent).
    pub fn weight(&self, doc: usize, term: &str) -> f64 {
        let Some(&id) = self.vocab.get(term) else { return 0.0 };
        let p = &self.postings[id];
        p.binary_search_by_key(&doc, |e| e.0).map_or(0.0, |i| p[i].1)
    }

    /// Number of retrieval queries served so far.
    pub fn query_count(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }

    /// Cosine score of every document with a positive score, best first;
    /// ties by title.
    pub fn scores(&self, query: &str) -> Vec<(usize, f64)> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        let n = self.len();
        let mut qvec = Vec::new();
        for (term, c) in counts(terms(query)) {
            if let Some(&id) = self.vocab.get(&term) {
                let w = tf(c) * idf(n, self.doc_freq[id]);
                if w > 0.0 {
                    qvec.push((id, w));
                }
            }
        }
        let qnorm = qvec.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if qnorm == 0.0 {
            return Vec::new();
        }
        let mut dot: BTreeMap<usize, f64> = BTreeMap::new();
        for &(id, qw) in &qvec {
            for &(d, dw) in &self.postings[id] {
                *dot.entry(d).or_insert(0.0) += qw * dw;
            }
        }
        let mut out: Vec<(usize, f64)> = dot
            .into_iter()
            .filter(|&(d, _)| self.doc_norm[d] > 0.0)
            .map(|(d, s)| (d, s / (qnorm * self.doc_norm[d])))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.articles[a.0].title.cmp(&self.articles[b.0].title)));
        out
    }

    /// Top articles for `domain name`.
    pub fn retrieve(&self, entity: &Entity) -> Vec<&Article> {
        self.scores(&entity.query()).into_iter().take(ARTICLES_PER_QUERY).map(|(d, _)| &self.articles[d]).collect()
    }
}

fn document_text(a: &Article) -> String {
    let mut s = a.title.clone();
    for p in &a.paragraphs {
        s.push('\n');
        s.push_str(p);
    }
    s
}

/// Splits at `.`, `?` or `!` followed by whitespace and an uppercase letter,
/// except after a known abbreviation.
pub fn split_sentences(paragraph: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = paragraph.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for (k, &(i, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '?' | '!') {
            continue;
        }
        let mut j = k + 1;
        if j >= chars.len() || !chars[j].1.is_whitespace() {
            continue;
        }
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        if j >= chars.len() || !chars[j].1.is_uppercase() {
            continue;
        }
        if c == '.' {
            let word = paragraph[start..i].rsplit(char::is_whitespace).next().unwrap_or("");
            if ABBREVIATIONS.contains(&word.to_lowercase().as_str()) || is_initial(word) {
                continue;
            }
        }
        let s = paragraph[start..=i].trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
        start = chars[j].0;
    }
    let tail = paragraph[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

fn is_initial(word: &str) -> bool {
    let mut cs = word.chars();
    matches!((cs.next(), cs.next()), (Some(c), None) if c.is_uppercase())
}

/// One snippet per sentence of the first two paragraphs of each article.
/// Ids carry the normalized entity name.
pub fn chunk_snippets(articles: &[&Article], entity: &Entity) -> Vec<KnowledgeSnippet> {
    let name = normalize_value(&entity.name);
    let mut out = Vec::new();
    for (rank, a) in articles.iter().enumerate() {
        for (p, para) in a.paragraphs.iter().take(PARAGRAPHS_PER_ARTICLE).enumerate() {
            for (s, sent) in split_sentences(para).into_iter().enumerate() {
                out.push(KnowledgeSnippet {
                    id: SnippetId::new(&name, rank, p, s),
                    text: sent,
                    source_title: a.title.clone(),
                });
            }
        }
    }
    out
}

/// Snippets for every entity in order, keeping the first occurrence of each
/// distinct text.
pub fn candidates_for_dialogue(index: &CorpusIndex, entities: &[Entity]) -> Vec<KnowledgeSnippet> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for e in entities {
        for s in chunk_snippets(&index.retrieve(e), e) {
            if seen.insert(s.text.clone()) {
                out.push(s);
            }
        }
    }
    out
}

/// Reads a JSON-lines corpus, one `{title, paragraphs}` object per line.
pub fn load_corpus(path: &Path) -> Result<Vec<Article>> {
    let f = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        if !line.trim().is_empty() {
            let a: Article = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                path: path.to_path_buf(),
                offset: offset + e.column().saturating_sub(1),
                msg: e.to_string(),
            })?;
            out.push(a);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

pub fn save_corpus(path: &Path, corpus: &[Article]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for a in corpus {
        let line = serde_json::to_string(a).map_err(|e| CoreError::Serialization(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CoreError::io(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn art(title: &str, paras: &[&str]) -> Article {
        Article::new(title, paras.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn single_article_has_zero_idf() {
        let idx = CorpusIndex::build(vec![art("A", &["x y z"])]).unwrap();
        assert_eq!(idx.idf("x"), 0.0);
        assert!(idx.scores("x").is_empty());
    }

    #[test]
    fn idf_of_rare_term() {
        let idx = CorpusIndex::build(vec![art("A", &["apple"]), art("B", &["pear"]), art("C", &["plum"])]).unwrap();
        assert!((idx.idf("apple") - (2.5f64 / 1.5).ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(CorpusIndex::build(vec![]), Err(CoreError::Config(_))));
    }

    #[test]
    fn oov_query_is_empty() {
        let idx = CorpusIndex::build(vec![art("A", &["apple"]), art("B", &["pear"]), art("C", &["plum"])]).unwrap();
        assert!(idx.retrieve(&Entity::new("qqq", "zzz")).is_empty());
    }

    #[test]
    fn ties_go_to_smaller_title() {
        let idx = CorpusIndex::build(vec![
            art("Zeta", &["shared word"]),
            art("Alpha", &["shared word"]),
            art("M", &["other"]),
            art("N", &["more"]),
            art("O", &["stuff"]),
        ])
        .unwrap();
        let r = idx.scores("shared");
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].1, r[1].1);
        assert_eq!(idx.articles()[r[0].0].title, "Alpha");
    }

    #[test]
    fn sentence_splitter_rules() {
        assert_eq!(split_sentences("One. Two? Three! four"), vec!["One.", "Two?", "Three! four"]);
        assert_eq!(
            split_sentences("Dr. Smith met Mr. Jones. Then left."),
            vec!["Dr. Smith met Mr. Jones.", "Then left."]
        );
        assert_eq!(split_sentences("Born in 1990.It was"), vec!["Born in 1990.It was"]);
        assert_eq!(split_sentences("J. R. Smith wrote it. Done."), vec!["J. R. Smith wrote it.", "Done."]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn chunking_counts_and_ids() {
        let a = art("A", &["S one. S two. S three."]);
        let e = Entity::new("X", "music");
        let s = chunk_snippets(&[&a], &e);
        assert_eq!(s.len(), 3);
        assert_eq!(s.iter().map(|k| k.id.sentence).collect::<Vec<_>>(), vec![0, 1, 2]);

        let b = art("B", &["A a. B b.", "C c. D d.", "E e. F f."]);
        let c = art("C", &["G g. H h.", "I i. J j."]);
        let s = chunk_snippets(&[&b, &c], &e);
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|k| k.id.paragraph < 2));
        assert_eq!(s[4].id, SnippetId::new("x", 1, 0, 0));
    }

    #[test]
    fn snippet_id_round_trip() {
        let id = SnippetId::new("Guns N' Roses #1", 1, 0, 12);
        assert_eq!(id.to_string().parse::<SnippetId>().unwrap(), id);
        assert!("abc".parse::<SnippetId>().is_err());
        assert!("abc#1.2".parse::<SnippetId>().is_err());
    }

    #[test]
    fn corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let c = vec![art("A", &["x. Y."]), art("B", &["z"])];
        save_corpus(&p, &c).unwrap();
        assert_eq!(load_corpus(&p).unwrap(), c);
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["red", "blue", "green", "cat", "dog", "sun", "moon", "tree", "river", "stone"])
            .prop_map(str::to_string)
    }

    fn corpus() -> impl Strategy<Value = Vec<Article>> {
        prop::collection::vec(prop::collection::vec(word(), 1..12), 1..8).prop_map(|docs| {
            docs.into_iter().enumerate().map(|(i, ws)| Article::new(format!("T{i}"), vec![ws.join(" ")])).collect()
        })
    }

    proptest! {
        #[test]
        fn scores_are_sorted_and_non_negative(c in corpus(), q in prop::collection::vec(word(), 1..4)) {
            let idx = CorpusIndex::build(c).unwrap();
            let s = idx.scores(&q.join(" "));
            for w in s.windows(2) {
                prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && idx.articles()[w[0].0].title < idx.articles()[w[1].0].title));
            }
            prop_assert!(s.iter().all(|x| x.1 > 0.0 && x.1 <= 1.0 + 1e-12));
        }

        #[test]
        fn retrieval_is_deterministic(c in corpus(), q in word()) {
            let a = CorpusIndex::build(c.clone()).unwrap().scores(&q);
            let b = CorpusIndex::build(c).unwrap().scores(&q);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn chunking_preserves_order(paras in prop::collection::vec(prop::collection::vec("Q[a-z]{2,5}", 1..5), 1..4)) {
            let a = Article::new("A", paras.iter().map(|p| p.iter().map(|w| format!("{w}.")).collect::<Vec<_>>().join(" ")).collect());
            let s = chunk_snippets(&[&a], &Entity::new("e", "d"));
            let expect: usize = paras.iter().take(2).map(Vec::len).sum();
            prop_assert_eq!(s.len(), expect);
            for w in s.windows(2) {
                prop_assert!(w[0].id < w[1].id);
            }
        }
    }
}
