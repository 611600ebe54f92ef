mod common;

use kgtod::retrieval::CorpusIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn planted_article_ranks_first_and_scores_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (entities, corpus) = common::planted_corpus(&mut rng, 50, 500);
    let index = CorpusIndex::build(corpus.clone()).unwrap();
    for (i, e) in entities.iter().enumerate() {
        let top = index.retrieve(e);
        assert_eq!(top[0].title, corpus[i].title, "query {}", e.query());
        if i % 10 == 0 {
            let oracle = common::tfidf_oracle(&corpus, &e.query());
            let got = index.scores(&e.query());
            for (d, s) in &got {
                assert!((s - oracle[*d]).abs() <= 1e-9, "doc {d}: {s} vs {}", oracle[*d]);
            }
            let listed = got.len();
            assert_eq!(listed, oracle.iter().filter(|&&x| x > 0.0).count());
        }
    }
}
