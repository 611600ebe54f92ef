use std::sync::OnceLock;

use kgtod::data::Dialogue;
use kgtod::pipeline::*;
use kgtod::retrieval::CorpusIndex;
use kgtod::select::RankerModel;
use kgtod::seqfmt::Decision;
use kgtod::synth::{generate_synthetic, SynthOutput, SynthSchema};
use kgtod_lm::LmConfig;

struct Fixture {
    out: SynthOutput,
    index: CorpusIndex,
    config: PipelineConfig,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let schema = SynthSchema::default_schema();
        let out = generate_synthetic(&schema, 40, 21).unwrap();
        let index = CorpusIndex::build(out.corpus.clone()).unwrap();
        let config = PipelineConfig { entity_slots: schema.entity_slots(), ..Default::default() };
        Fixture { out, index, config }
    })
}

fn lm(epochs: usize) -> LmConfig {
    LmConfig {
        n_layers: 1,
        d_model: 32,
        n_heads: 2,
        context_len: 336,
        learning_rate: 3e-3,
        batch_size: 8,
        epochs,
        seed: 5,
        ..Default::default()
    }
}

fn train(arch: Architecture, ds: &[Dialogue], epochs: usize) -> ModelSet {
    train_with(arch, ds, &lm(epochs))
}

fn train_with(arch: Architecture, ds: &[Dialogue], cfg: &LmConfig) -> ModelSet {
    let f = fixture();
    let (seqs, _) =
        make_training_data(arch, ds, KnowledgeSource::Index(&f.index), &RankerModel::Lexical, &f.config).unwrap();
    let vocab = build_vocab(&seqs, []);
    train_models(arch, &seqs, &vocab, cfg, |_, _, _| {}).unwrap().0
}

fn engine<'a>(models: &'a ModelSet, index: &'a CorpusIndex) -> Engine<'a> {
    let f = fixture();
    Engine { models, knowledge: KnowledgeSource::Index(index), ranker: &RankerModel::Lexical, config: &f.config }
}

#[test]
fn baseline_never_queries_the_index() {
    let f = fixture();
    let models = train(Architecture::Baseline, &f.out.dialogues[..10], 1);
    let index = CorpusIndex::build(f.out.corpus.clone()).unwrap();
    let e = engine(&models, &index);
    for stage in [StageSpec::END_TO_END, StageSpec::GOLD_TOD] {
        let preds = e.predict(&f.out.dialogues[30..], stage).unwrap();
        assert!(preds
            .iter()
            .all(|p| p.provenance.knowledge == Source::Absent && p.selected.is_empty() && p.decision.is_none()));
    }
    assert_eq!(index.query_count(), 0);
}

#[test]
fn stages_control_provenance_and_gold_inputs() {
    let f = fixture();
    let models = train(Architecture::Plus, &f.out.dialogues[..10], 1);
    let e = engine(&models, &f.index);
    let test = &f.out.dialogues[30..];
    let gold_turn = |p: &TurnPrediction| {
        let d = test.iter().find(|d| d.id == p.dialogue_id).unwrap();
        &d.turns[p.turn_index]
    };

    for p in e.predict(test, StageSpec::END_TO_END).unwrap() {
        assert_eq!((p.provenance.belief, p.provenance.acts), (Source::Predicted, Source::Predicted));
        assert_eq!((p.provenance.knowledge, p.provenance.decision), (Source::Predicted, Source::Predicted));
        assert!(p.selected.len() <= 3);
    }
    for p in e.predict(test, StageSpec::GOLD_TOD).unwrap() {
        let g = gold_turn(&p);
        assert_eq!((p.provenance.belief, p.provenance.acts), (Source::Gold, Source::Gold));
        assert_eq!((&p.belief, &p.acts), (&g.belief, &g.acts));
        assert_eq!(p.provenance.decision, Source::Predicted);
    }
    let gold_decision = StageSpec::new(true, true, false).unwrap();
    for p in e.predict(test, gold_decision).unwrap() {
        assert_eq!(p.decision, Some(Decision::from_flag(gold_turn(&p).enriched)));
        assert_eq!(p.provenance.decision, Source::Gold);
        assert_eq!(p.provenance.knowledge, Source::Predicted);
    }
    let (report, preds) = e.run_eval(test, StageSpec::ALL_ORACLE, "lexical").unwrap();
    for p in &preds {
        assert_eq!(p.provenance.knowledge, Source::Gold);
        assert!(p.gold_snippet_ids.iter().all(|id| p.selected.contains(id)));
    }
    assert_eq!((report.joint_ga, report.selection_recall, report.decision_f1), (Some(1.0), Some(1.0), Some(1.0)));
    assert_eq!(report.act_slot_f1, Some(1.0));
    assert!(report.in_range());
}

#[test]
fn inference_is_deterministic() {
    let f = fixture();
    let a = train(Architecture::Combiner, &f.out.dialogues[..8], 1);
    let b = train(Architecture::Combiner, &f.out.dialogues[..8], 1);
    assert_eq!(a.main.params.as_slice(), b.main.params.as_slice());
    let test = &f.out.dialogues[36..];
    let pa = engine(&a, &f.index).predict(test, StageSpec::END_TO_END).unwrap();
    let pb = engine(&a, &f.index).predict(test, StageSpec::END_TO_END).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn model_set_round_trips_through_disk() {
    let f = fixture();
    let m = train(Architecture::Combiner, &f.out.dialogues[..4], 1);
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = ModelSet::load(dir.path()).unwrap();
    let test = &f.out.dialogues[38..];
    assert_eq!(
        engine(&m, &f.index).predict(test, StageSpec::GOLD_TOD).unwrap(),
        engine(&back, &f.index).predict(test, StageSpec::GOLD_TOD).unwrap()
    );
    assert!(ModelSet::load(&dir.path().join("missing")).is_err());
}

#[test]
fn memorizes_its_training_dialogues() {
    let f = fixture();
    let train_set = &f.out.dialogues[..3];
    let cfg = LmConfig { batch_size: 2, learning_rate: 5e-3, ..lm(80) };
    let models = train_with(Architecture::Plus, train_set, &cfg);
    let (r, _) = engine(&models, &f.index).run_eval(train_set, StageSpec::END_TO_END, "lexical").unwrap();
    assert_eq!(r.joint_ga, Some(1.0), "{r:?}");
    assert_eq!(r.act_slot_f1, Some(1.0), "{r:?}");
    assert_eq!(r.bleu4_orig, Some(1.0), "{r:?}");
    assert_eq!(r.n_parse_warnings, 0);
}
