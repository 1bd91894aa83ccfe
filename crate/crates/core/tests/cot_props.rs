use egomind_core::cot::{format_reward, format_reward_bytes, parse, render, CotDocument, PsaSection, RpcBlock, RpcKind};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9#]{0,8}"
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..8).prop_map(|w| w.join(" "))
}

fn paragraph() -> impl Strategy<Value = String> {
    prop::collection::vec(sentence(), 1..4).prop_map(|s| s.join("\n"))
}

fn document() -> impl Strategy<Value = CotDocument> {
    (
        paragraph(),
        prop::collection::vec((sentence(), sentence()), 0..5),
        sentence(),
        prop::collection::vec(word(), 0..4),
        prop::collection::vec(word(), 0..4),
        prop::collection::vec(sentence(), 0..4),
        prop::collection::vec(sentence(), 0..2),
        paragraph(),
        "[A-D]|[0-9]{1,3}(\\.[0-9])?",
    )
        .prop_map(|(summary, steps, first, targets, extra, relations, notes, reasoning, answer)| {
            let mut rpc = vec![RpcBlock::frame(&first)];
            for (t, f) in steps {
                rpc.push(RpcBlock::transition(&t));
                rpc.push(RpcBlock::frame(&f));
            }
            let mut candidates = targets.clone();
            candidates.extend(extra);
            CotDocument {
                summary,
                rpc_narrative: rpc,
                psa: PsaSection {
                    targets,
                    candidates,
                    relations,
                    notes: notes.into_iter().map(|n| format!("note {n}")).collect(),
                },
                reasoning,
                answer,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn parse_inverts_render(doc in document()) {
        let text = render(&doc).unwrap();
        prop_assert_eq!(parse(&text).unwrap(), doc);
        prop_assert_eq!(format_reward(&text), 1);
    }

    #[test]
    fn reward_agrees_with_parse_on_arbitrary_text(text in "(<think>|</think>|<answer>|</answer>|## Summary|## Reasoning|\n|[a-zA-Z \\[\\]]){0,60}") {
        prop_assert_eq!(format_reward(&text) == 1, parse(&text).is_ok());
    }

    #[test]
    fn reward_is_total_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let r = format_reward_bytes(&bytes);
        prop_assert!(r <= 1);
    }
}

#[test]
fn block_order_is_preserved() {
    let doc = CotDocument {
        summary: "s".into(),
        rpc_narrative: vec![
            RpcBlock::frame("one"),
            RpcBlock::transition("a"),
            RpcBlock::frame("two"),
            RpcBlock::transition("b"),
            RpcBlock::frame("three"),
        ],
        psa: PsaSection::default(),
        reasoning: "r".into(),
        answer: "A".into(),
    };
    let back = parse(&render(&doc).unwrap()).unwrap();
    let kinds: Vec<RpcKind> = back.rpc_narrative.iter().map(|b| b.kind).collect();
    assert_eq!(kinds, [RpcKind::Frame, RpcKind::Transition, RpcKind::Frame, RpcKind::Transition, RpcKind::Frame]);
    assert_eq!(back, doc);
}

#[test]
fn deep_nesting_is_rejected_quickly() {
    let deep = "<think>".repeat(50_000) + &"</think>".repeat(50_000);
    let start = std::time::Instant::now();
    assert_eq!(format_reward(&deep), 0);
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
