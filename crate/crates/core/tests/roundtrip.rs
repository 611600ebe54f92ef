mod common;

use std::time::Instant;

use kgtod::data::Dialogue;
use kgtod::ingest::{dataset_json, parse_dataset, Format};
use kgtod::seqfmt::{linearize, parse_decode, parse_sequence, SegmentTag, SequenceKind, TurnInput};
use kgtod::synth::{generate_synthetic, SynthSchema};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KINDS: [SequenceKind; 4] =
    [SequenceKind::Full, SequenceKind::TodOnly, SequenceKind::ResponsePrompt, SequenceKind::TodResponse];

#[test]
fn ten_thousand_random_turns_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..10_000 {
        let t = common::random_turn(&mut rng);
        let input = TurnInput {
            context: &t.context,
            belief: &t.belief,
            db: t.db.as_ref(),
            acts: &t.acts,
            knowledge: &t.knowledge,
            decision: t.decision,
            response: &t.response,
        };
        let kind = KINDS[i % KINDS.len()];
        let (s, _) = linearize(&input, kind).unwrap();
        let out = parse_decode(&s, kind);
        assert!(out.parse_warnings.is_empty(), "{s}");
        if kind.has(SegmentTag::Belief) {
            assert_eq!(out.belief, t.belief, "{s}");
        }
        assert_eq!(out.acts, t.acts, "{s}");
        assert_eq!(out.decision, kind.has(SegmentTag::Decision).then_some(t.decision));
        if kind.has(SegmentTag::Response) {
            assert_eq!(out.response, t.response);
        }
        let p = parse_sequence(&s);
        assert_eq!(p.context.as_ref(), Some(&t.context));
        assert_eq!(p.db, kind.has(SegmentTag::Db).then(|| t.db.clone()));
    }
    assert!(start.elapsed().as_secs_f64() < 10.0, "{:?}", start.elapsed());
}

#[test]
fn dataset_json_round_trips() {
    let ds = generate_synthetic(&SynthSchema::default_schema(), 50, 4).unwrap().dialogues;
    let text = serde_json::to_string(&dataset_json(&ds)).unwrap();
    let back: Vec<Dialogue> = parse_dataset(&text, Format::Ketod).unwrap();
    assert_eq!(back, ds);
}
