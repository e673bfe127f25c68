use std::sync::OnceLock;

use dsqa_core::corpus::QuestionType;
use dsqa_core::dialog::{FallbackReason, Outcome, Pipeline, PipelineConfig, Stage};
use dsqa_core::fixtures;
use dsqa_core::kb::{RelationType, Route};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| fixtures::demo_pipeline(1))
}

#[test]
fn shark_cartilage_effectiveness() {
    let turn = pipeline().handle_turn("are there any proven benefits to taking shark cartilage?");
    assert_eq!(turn.qtype, QuestionType::Effectiveness);
    assert!(
        turn.answer
            .contains("Shark Cartilage is effective for Degenerative Polyarthritis"),
        "{}",
        turn.answer
    );
    assert_eq!(
        turn.outcome,
        Outcome::Answered {
            routes: vec![Route::Relation(RelationType::IsEffectiveFor)]
        }
    );
}

#[test]
fn melatonin_safety() {
    let turn = pipeline().handle_turn("is it safe to take melatonin?");
    assert_eq!(turn.qtype, QuestionType::Safety);
    assert!(turn.answer.starts_with("Here is what I found about pure crystalline Melatonin: Melatonin may cause drowsiness."), "{}", turn.answer);
}

#[test]
fn blessed_thistle_adverse_effects() {
    let turn = pipeline()
        .handle_turn("are there any dangerous side effects that anyone has experienced with the supplement Blessed Thistle?");
    assert_eq!(
        turn.answer,
        "The Blessed Thistle preparation has adverse effects like Eye disorders."
    );
}

#[test]
fn interaction_restricted_to_named_drug() {
    let turn = pipeline().handle_turn("Can I take St. John's Wort with warfarin?");
    assert_eq!(turn.qtype, QuestionType::Interaction);
    assert_eq!(turn.facts.len(), 1, "{turn:#?}");
    assert_eq!(turn.answer, "St. John's Wort interacts with Warfarin.");
}

#[test]
fn question_without_entity_falls_back() {
    let turn = pipeline().handle_turn("Where can I buy it?");
    assert_eq!(
        turn.outcome,
        Outcome::Fallback {
            reason: FallbackReason::NoEntity
        }
    );
    assert!(!turn.answer.is_empty());
    assert!(turn
        .trace
        .events
        .iter()
        .any(|e| e.message.contains("fallback no_entity")));
}

#[test]
fn unknown_supplement_is_reported() {
    let turn = pipeline().handle_turn("Is ashwagandha safe during pregnancy?");
    assert_eq!(
        turn.outcome,
        Outcome::Fallback {
            reason: FallbackReason::UnresolvedEntity
        },
        "{turn:#?}"
    );
    assert!(turn.answer.contains("ashwagandha"));
}

#[test]
fn missing_facts_name_the_supplement() {
    let turn = pipeline().handle_turn("Where can I buy kratom pills?");
    assert_eq!(
        turn.outcome,
        Outcome::Fallback {
            reason: FallbackReason::NoAnswer
        },
        "{turn:#?}"
    );
    assert_eq!(
        turn.answer,
        "I could not find availability information about Kratom."
    );
}

#[test]
fn low_confidence_asks_for_clarification() {
    let p = pipeline();
    let strict = Pipeline {
        config: PipelineConfig {
            confidence_floor: 1.0,
            ..PipelineConfig::default()
        },
        ..p.clone()
    };
    let turn = strict.handle_turn("Does Niacin really work?");
    assert_eq!(
        turn.outcome,
        Outcome::Fallback {
            reason: FallbackReason::LowConfidence
        }
    );
    assert!(turn.answer.contains("effectiveness"), "{}", turn.answer);
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(0..40);
    (0..len)
        .map(|_| match rng.gen_range(0..4) {
            0 => rng.gen_range(b'a'..=b'z') as char,
            1 => *[' ', '?', '.', '\'', '-', '\t', '\n']
                .get(rng.gen_range(0..7))
                .unwrap(),
            2 => char::from_u32(rng.gen_range(0x80..0x3000)).unwrap_or('x'),
            _ => rng.gen::<char>(),
        })
        .collect()
}

#[test]
fn every_input_gets_an_answer_and_a_complete_trace() {
    let p = pipeline();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let inputs: Vec<String> = (0..1000).map(|_| random_text(&mut rng)).collect();
    let first: Vec<_> = inputs
        .iter()
        .map(|t| p.handle_turn(t).without_timings())
        .collect();
    for (text, turn) in inputs.iter().zip(&first) {
        assert!(!turn.answer.trim().is_empty(), "{text:?}");
        let stages = turn.trace.stages();
        for s in [Stage::Classify, Stage::Ner, Stage::Link, Stage::Render] {
            assert!(stages.contains(&s), "{text:?} missing {s:?}");
        }
        let last = &turn.trace.events.last().unwrap().message;
        assert!(
            last.starts_with("answered via") || last.starts_with("fallback"),
            "{text:?}: {last}"
        );
        assert!((0.0..=1.0).contains(&turn.confidence));
    }
    let second: Vec<_> = inputs
        .iter()
        .map(|t| p.handle_turn(t).without_timings())
        .collect();
    assert_eq!(first, second);
}
