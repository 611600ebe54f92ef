//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criterion 1 needs the public KETOD release; point `KGTOD_KETOD_DATA` at
//! its JSON file. Without it the criterion fails as unverifiable.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use kgtod::data::Dialogue;
use kgtod::ingest::{load_dataset, Format};
use kgtod::metrics::{self, EvalReport};
use kgtod::pipeline::*;
use kgtod::retrieval::CorpusIndex;
use kgtod::select::{train_ranker, RankerConfig, RankerModel};
use kgtod::seqfmt::{linearize, parse_decode, parse_sequence, SegmentTag, SequenceKind, TurnInput};
use kgtod::stats::dataset_stats;
use kgtod::synth::{generate_synthetic, SynthSchema};
use kgtod_lm::{grad_check, tiny_config, LmConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn progress(msg: &str) {
    eprintln!("[acceptance] {msg}");
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn criterion_1() -> Outcome {
    let Ok(path) = std::env::var("KGTOD_KETOD_DATA") else {
        return outcome(false, "KETOD release not available (set KGTOD_KETOD_DATA); release statistics unverified");
    };
    let start = Instant::now();
    let ds = match load_dataset(path.as_ref(), Format::Ketod) {
        Ok(ds) => ds,
        Err(e) => return outcome(false, format!("cannot load {path}: {e}")),
    };
    let s = dataset_stats(&ds);
    let secs = start.elapsed().as_secs_f64();
    let near = |v: Option<f64>, want: f64, tol: f64| v.is_some_and(|x| (x - want).abs() <= tol);
    let pass = s.dialogues == 5324
        && s.turns == 52063
        && s.enriched_turns == 6302
        && s.entities == 4639
        && s.snippets == 33761
        && near(s.avg_turns, 9.78, 0.01)
        && near(s.avg_entities, 4.98, 0.01)
        && near(s.avg_snippets, 70.50, 0.05)
        && near(s.avg_enriched_tokens, 28.07, 2.807)
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "dialogues {} turns {} enriched {} entities {} snippets {} avg turns {} entities {} snippets {} tokens {} in {secs:.1}s",
            s.dialogues,
            s.turns,
            s.enriched_turns,
            s.entities,
            s.snippets,
            fmt(s.avg_turns),
            fmt(s.avg_entities),
            fmt(s.avg_snippets),
            fmt(s.avg_enriched_tokens)
        ),
    )
}

fn criterion_2() -> Outcome {
    let kinds = [SequenceKind::Full, SequenceKind::TodOnly, SequenceKind::ResponsePrompt, SequenceKind::TodResponse];
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut ok = 0;
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
        let kind = kinds[i % kinds.len()];
        let Ok((s, _)) = linearize(&input, kind) else { continue };
        let out = parse_decode(&s, kind);
        let p = parse_sequence(&s);
        let texts: Vec<String> = t.knowledge.iter().map(|k| k.text.clone()).collect();
        let good = out.parse_warnings.is_empty()
            && (!kind.has(SegmentTag::Belief) || out.belief == t.belief)
            && out.acts == t.acts
            && out.decision == kind.has(SegmentTag::Decision).then_some(t.decision)
            && (!kind.has(SegmentTag::Response) || out.response == t.response)
            && p.context.as_ref() == Some(&t.context)
            && p.db == kind.has(SegmentTag::Db).then(|| t.db.clone())
            && p.knowledge == kind.has(SegmentTag::Knowledge).then_some(texts);
        ok += usize::from(good);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(ok == 10_000 && secs < 10.0, format!("{ok}/10000 turns round-trip in {secs:.2}s"))
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    }
}

fn criterion_3(oracle_reports: &[EvalReport]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fail = |name: &'static str, ok: bool| {
        if !ok {
            *failures.entry(name).or_default() += 1;
        }
    };
    for _ in 0..200 {
        let n = rng.gen_range(0..8);
        let pb: Vec<_> = (0..n).map(|_| common::belief(&mut rng)).collect();
        let gb: Vec<_> = (0..n).map(|_| common::belief(&mut rng)).collect();
        fail("joint_ga", close(metrics::joint_ga(&pb, &gb).unwrap(), common::joint_ga(&pb, &gb)));
        fail("avg_ga", close(metrics::avg_ga(&pb, &gb).unwrap(), common::avg_ga(&pb, &gb)));
        let pa: Vec<_> = (0..n).map(|_| common::acts(&mut rng)).collect();
        let ga: Vec<_> = (0..n).map(|_| common::acts(&mut rng)).collect();
        fail("act_slot_f1", close(metrics::act_slot_f1(&pa, &ga).ok(), Some(common::act_slot_f1(&pa, &ga))));
        let refs: Vec<String> = (0..n).map(|_| common::sentence(&mut rng, 3, 14)).collect();
        let cands: Vec<String> = refs
            .iter()
            .map(|r| {
                if rng.gen_bool(0.6) {
                    format!("{r} {}", common::sentence(&mut rng, 0, 3))
                } else {
                    common::sentence(&mut rng, 0, 14)
                }
            })
            .collect();
        fail("bleu4", close(metrics::bleu4(&cands, &refs).unwrap(), common::bleu4(&cands, &refs)));
        let gs: Vec<Vec<_>> =
            (0..n).map(|_| (0..rng.gen_range(1..4)).map(|_| common::snippet_id(&mut rng)).collect()).collect();
        let ss: Vec<Vec<_>> = (0..n).map(|_| (0..3).map(|_| common::snippet_id(&mut rng)).collect()).collect();
        fail(
            "selection_recall",
            close(metrics::selection_recall(&ss, &gs).unwrap(), common::selection_recall(&ss, &gs)),
        );
        let pd: Vec<_> = (0..n).map(|_| common::decision(&mut rng)).collect();
        let gd: Vec<_> = (0..n).map(|_| common::decision(&mut rng)).collect();
        fail("decision_f1", close(metrics::decision_f1(&pd, &gd).ok(), Some(common::decision_f1(&pd, &gd))));
    }
    let identities = !oracle_reports.is_empty()
        && oracle_reports.iter().all(|r| {
            let tod = r.joint_ga == Some(1.0) && r.act_slot_f1 == Some(1.0);
            let knowledge = r.arch == "baseline" || (r.selection_recall == Some(1.0) && r.decision_f1 == Some(1.0));
            tod && knowledge
        });
    let detail = format!(
        "oracle mismatches {:?}; all-oracle selection recall / decision F1 = {}",
        failures,
        oracle_reports
            .iter()
            .map(|r| format!("{} {}/{}", r.arch, fmt(r.selection_recall), fmt(r.decision_f1)))
            .collect::<Vec<_>>()
            .join(", ")
    );
    outcome(failures.is_empty() && identities, detail)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (entities, corpus) = common::planted_corpus(&mut rng, 50, 500);
    let index = match CorpusIndex::build(corpus.clone()) {
        Ok(i) => i,
        Err(e) => return outcome(false, e.to_string()),
    };
    let hits = entities
        .iter()
        .enumerate()
        .filter(|(i, e)| index.retrieve(e).first().is_some_and(|a| a.title == corpus[*i].title))
        .count();
    let mut worst = 0.0f64;
    for e in entities.iter().step_by(5) {
        let oracle = common::tfidf_oracle(&corpus, &e.query());
        let mut got = vec![0.0; corpus.len()];
        for (d, s) in index.scores(&e.query()) {
            got[d] = s;
        }
        worst = got.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    outcome(
        hits == 50 && worst <= 1e-9,
        format!("planted article at rank 1 for {hits}/50 queries; max |score - oracle| = {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..5 {
        match grad_check(&tiny_config(), 11, seed) {
            Ok(r) => worst = worst.max(r.max_rel_error),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-4 && secs < 60.0, format!("max relative error {worst:.2e} over 5 seeds in {secs:.1}s"))
}

/// Everything the synthetic-evaluation criteria share.
struct Synthetic {
    reports: BTreeMap<(Architecture, &'static str), EvalReport>,
    plus_train: Duration,
    lm_vocab: usize,
    data_vocab: usize,
    recall: [(&'static str, Option<f64>); 3],
}

const STAGES: [(StageSpec, &str); 3] =
    [(StageSpec::ALL_ORACLE, "all-oracle"), (StageSpec::GOLD_TOD, "gold TOD"), (StageSpec::END_TO_END, "end-to-end")];

fn lm_config() -> LmConfig {
    LmConfig {
        n_layers: 2,
        d_model: 64,
        n_heads: 4,
        context_len: 384,
        learning_rate: 3e-3,
        batch_size: 16,
        epochs: 8,
        seed: 1,
        ..Default::default()
    }
}

fn synthetic() -> kgtod::Result<Synthetic> {
    let schema = SynthSchema::default_schema();
    let out = generate_synthetic(&schema, 2000, 42)?;
    let (train, test): (&[Dialogue], &[Dialogue]) = out.dialogues.split_at(1600);
    let index = CorpusIndex::build(out.corpus.clone())?;
    let src = KnowledgeSource::Index(&index);
    let config = PipelineConfig { entity_slots: schema.entity_slots(), ..Default::default() };

    progress("training the ranker");
    let ranker = train_ranker(
        &ranker_examples(train, src, &config.entity_slots),
        &RankerConfig { seed: 1, ..Default::default() },
    )?
    .model;
    let recall = [
        ("trained", selection_recall_with(test, src, &config.entity_slots, Selector::Ranker(&ranker))?),
        ("lexical", selection_recall_with(test, src, &config.entity_slots, Selector::Ranker(&RankerModel::Lexical))?),
        ("random", selection_recall_with(test, src, &config.entity_slots, Selector::Random(1))?),
    ];

    let mut reports = BTreeMap::new();
    let (mut plus_train, mut lm_vocab) = (Duration::ZERO, 0);
    for arch in [Architecture::Plus, Architecture::Baseline, Architecture::Combiner] {
        let (seqs, _) = make_training_data(arch, train, src, &ranker, &config)?;
        let vocab = build_vocab(&seqs, []);
        let start = Instant::now();
        let (models, _) = train_models(arch, &seqs, &vocab, &lm_config(), |m, e, l| {
            progress(&format!("{arch} {m} epoch {e}: loss {l:.4}"))
        })?;
        if arch == Architecture::Plus {
            plus_train = start.elapsed();
            lm_vocab = vocab.len();
        }
        let engine = Engine { models: &models, knowledge: src, ranker: &ranker, config: &config };
        for (stage, label) in STAGES {
            let (r, _) = engine.run_eval(test, stage, "trained")?;
            progress(&format!(
                "{arch} {label}: joint GA {} BLEU aug {} all {}",
                fmt(r.joint_ga),
                fmt(r.bleu4_aug),
                fmt(r.bleu4_all)
            ));
            reports.insert((arch, label), r);
        }
    }
    let data_vocab = dataset_stats(&out.dialogues).vocabulary;
    Ok(Synthetic { reports, plus_train, lm_vocab, data_vocab, recall })
}

fn criterion_6(s: &Synthetic) -> Outcome {
    let r = &s.reports[&(Architecture::Plus, "end-to-end")];
    let mins = s.plus_train.as_secs_f64() / 60.0;
    let pass = r.joint_ga.is_some_and(|x| x >= 0.80)
        && r.decision_f1.is_some_and(|x| x >= 0.70)
        && r.bleu4_all.is_some_and(|x| x >= 0.50)
        && s.lm_vocab <= 1500
        && s.data_vocab <= 1500
        && mins <= 30.0;
    outcome(
        pass,
        format!(
            "joint GA {} decision F1 {} BLEU-4 all {}; vocab {} (dataset {}); trained in {mins:.1} min",
            fmt(r.joint_ga),
            fmt(r.decision_f1),
            fmt(r.bleu4_all),
            s.lm_vocab,
            s.data_vocab
        ),
    )
}

fn criterion_7(s: &Synthetic) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for arch in Architecture::ALL {
        let aug = |label| s.reports[&(arch, label)].bleu4_aug;
        let (Some(a), Some(g), Some(e)) = (aug("all-oracle"), aug("gold TOD"), aug("end-to-end")) else {
            pass = false;
            parts.push(format!("{arch}: missing BLEU-4 aug"));
            continue;
        };
        pass &= a >= g && g >= e - 0.02;
        parts.push(format!("{arch} {a:.4} >= {g:.4} >= {e:.4} - 0.02"));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_8(s: &Synthetic) -> Outcome {
    let [(_, t), (_, l), (_, r)] = s.recall;
    let pass = matches!((t, l, r), (Some(t), Some(l), Some(r)) if t > l && l > r);
    outcome(pass, format!("selection recall trained {} > lexical {} > random {}", fmt(t), fmt(l), fmt(r)))
}

fn criterion_9(s: &Synthetic) -> Outcome {
    let base =
        STAGES.iter().filter_map(|(_, l)| s.reports[&(Architecture::Baseline, *l)].bleu4_aug).fold(f64::NAN, f64::max);
    let plus = s.reports[&(Architecture::Plus, "all-oracle")].bleu4_aug;
    let pass = plus.is_some_and(|p| base < p);
    outcome(pass, format!("baseline best BLEU-4 aug {base:.4} < plus with gold knowledge {}", fmt(plus)))
}

fn main() {
    let names = [
        "KETOD release statistics",
        "sequence round-trip",
        "metric oracle equivalence",
        "retrieval",
        "gradient check",
        "desk-scale end-to-end",
        "stage-ablation ordering",
        "selection ordering",
        "baseline contrast",
    ];
    let mut results: Vec<Outcome> = Vec::new();
    progress("criteria 1-5");
    results.push(criterion_1());
    results.push(criterion_2());
    let c4 = criterion_4();
    let c5 = criterion_5();
    progress("synthetic evaluation (trains three architectures)");
    let start = Instant::now();
    match synthetic() {
        Ok(s) => {
            let oracle: Vec<EvalReport> =
                s.reports.iter().filter(|((_, l), _)| *l == "all-oracle").map(|(_, r)| r.clone()).collect();
            results.push(criterion_3(&oracle));
            results.push(c4);
            results.push(c5);
            results.extend([criterion_6(&s), criterion_7(&s), criterion_8(&s), criterion_9(&s)]);
        }
        Err(e) => {
            results.push(criterion_3(&[]));
            results.push(c4);
            results.push(c5);
            for _ in 0..4 {
                results.push(outcome(false, format!("synthetic run failed: {e}")));
            }
        }
    }
    progress(&format!("synthetic evaluation took {:.1} min", start.elapsed().as_secs_f64() / 60.0));

    println!();
    for (i, (name, r)) in names.iter().zip(&results).enumerate() {
        println!("criterion {} [{}] {name}: {}", i + 1, if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("\n{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
