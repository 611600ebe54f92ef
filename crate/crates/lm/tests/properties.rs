use kgtod_lm::{LmConfig, ModelParams, Session, Vocab};
use proptest::prelude::*;

fn model(v: usize) -> ModelParams<f32> {
    let c = LmConfig { n_layers: 1, d_model: 16, n_heads: 2, context_len: 24, ..Default::default() };
    ModelParams::init(&c, v, 3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn in_vocabulary_text_round_trips(words in prop::collection::vec("[a-z]{1,6}", 1..20)) {
        let text = words.join(" ");
        let v = Vocab::build([text.as_str()], ["<x>"]);
        prop_assert_eq!(v.decode(&v.encode(&text)), text.clone());
        prop_assert!(v.encode(&text).iter().all(|&i| i > Vocab::UNK_ID));
        prop_assert_eq!(v.encode("zzzzzzz"), vec![Vocab::UNK_ID]);
    }

    #[test]
    fn every_position_is_a_distribution(ids in prop::collection::vec(0u32..30, 1..24)) {
        let m = model(30);
        let p = m.next_token_probs(&ids).unwrap();
        for row in p.chunks(30) {
            let s: f64 = row.iter().map(|&x| x as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-4);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn generation_respects_budget_and_stop(prompt in prop::collection::vec(0u32..30, 1..10), max in 0usize..12) {
        let m = model(30);
        let mut s = Session::new(&m);
        s.feed(&prompt).unwrap();
        let out = s.generate(&[2], max).unwrap();
        prop_assert!(out.len() <= max);
        prop_assert!(out.iter().rev().skip(1).all(|&t| t != 2));
        prop_assert!(s.len() <= s.capacity());
    }
}
