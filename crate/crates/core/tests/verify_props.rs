use evidrank::corpus::{Claim, Corpus, EvidenceDoc, Modality, Sentence, VerdictLabel};
use evidrank::oracle::{ClassMass, MockFallback, MockOracle, OracleResponse, PromptBudget, Task, TemplateRegistry, TokenClass};
use evidrank::verify::{
    classify_one_level, form_pairs, majority_vote, CompanionCaps, DecisionBasis, PairModality, Prompting, RouteTemplates,
    TiePriority, Verifier, Vote,
};
use proptest::prelude::*;
use serde_json::Map;

fn arb_label() -> impl Strategy<Value = VerdictLabel> {
    prop::sample::select(vec![VerdictLabel::Supported, VerdictLabel::Refuted, VerdictLabel::Nei])
}

/// Confidences on a coarse grid so probability ties occur.
fn arb_votes() -> impl Strategy<Value = Vec<Vote>> {
    prop::collection::vec((arb_label(), 1u32..=5), 1..12).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (label, c))| Vote {
                pair: format!("p{i}"),
                label,
                confidence: c as f64 / 5.0,
                level_trace: None,
            })
            .collect()
    })
}

fn arb_yes_no() -> impl Strategy<Value = OracleResponse> {
    (1u32..=19, 0u32..=5).prop_map(|(y, o)| {
        let total = 20.0 + o as f64;
        let (yes, no) = (y as f64 / total, (20 - y) as f64 / total);
        let class = if yes > no { TokenClass::Yes } else { TokenClass::No };
        OracleResponse::new(class, ClassMass::from_named(yes, no, 0.0).unwrap(), yes.max(no)).unwrap()
    })
}

fn corpus(n: usize) -> Corpus {
    let sentences = (0..n)
        .map(|i| Sentence {
            sent_id: format!("s{i}"),
            doc_id: "d".into(),
            text: format!("sentence {i}"),
            extra: Map::new(),
        })
        .collect();
    Corpus::from_docs(vec![EvidenceDoc {
        doc_id: "d".into(),
        sentences,
        images: vec![],
        extra: Map::new(),
    }])
    .unwrap()
}

fn routes(prompting: Prompting) -> RouteTemplates {
    let reg = TemplateRegistry::default();
    RouteTemplates {
        prompting,
        one_level: reg.get("verify-one-level").unwrap().clone(),
        sufficiency: reg.get("verify-sufficiency").unwrap().clone(),
        stance: reg.get("verify-stance").unwrap().clone(),
        budget: PromptBudget::from_tokens(2048),
    }
}

fn no_scores(_: &str, _: Modality) -> Option<f64> {
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn vote_order_does_not_matter(votes in arb_votes(), rot in any::<prop::sample::Index>()) {
        let a = majority_vote("c", votes.clone()).unwrap();
        let mut shuffled = votes.clone();
        shuffled.rotate_left(rot.index(votes.len()));
        shuffled.reverse();
        let b = majority_vote("c", shuffled).unwrap();
        prop_assert_eq!((a.label, a.decision_basis), (b.label, b.decision_basis));
    }

    #[test]
    fn adding_a_winning_vote_keeps_the_verdict(votes in arb_votes()) {
        let before = majority_vote("c", votes.clone()).unwrap();
        let mut more = votes;
        more.push(Vote { pair: "extra".into(), label: before.label, confidence: 0.2, level_trace: None });
        let after = majority_vote("c", more).unwrap();
        prop_assert_eq!(after.label, before.label);
        prop_assert_eq!(after.decision_basis, DecisionBasis::Majority);
    }

    #[test]
    fn one_level_always_labels(y in 0u32..=10, n in 0u32..=10, e in 0u32..=10, o in 0u32..=5) {
        prop_assume!(y + n + e > 0);
        let t = (y + n + e + o) as f64;
        let mass = ClassMass::from_named(y as f64 / t, n as f64 / t, e as f64 / t).unwrap();
        let resp = OracleResponse::new(TokenClass::Other, mass, 0.5).unwrap();
        let (label, conf) = classify_one_level(&resp).unwrap();
        let got = match label {
            VerdictLabel::Supported => y,
            VerdictLabel::Refuted => n,
            VerdictLabel::Nei => e,
        };
        let best = y.max(n).max(e);
        prop_assert_eq!(got, best);
        prop_assert!((conf - best as f64 / (y + n + e) as f64).abs() < 1e-12);
        prop_assert!(conf > 0.0 && conf <= 1.0);
    }

    #[test]
    fn two_level_needs_sufficiency_first(
        answers in prop::collection::vec((arb_yes_no(), arb_yes_no()), 1..6),
    ) {
        let c = corpus(answers.len());
        let mut mock = MockOracle::new(MockFallback::Error);
        for (i, (l1, l2)) in answers.iter().enumerate() {
            mock.insert(Task::Sufficiency, "c1", &format!("s{i}"), *l1).unwrap();
            mock.insert(Task::Stance, "c1", &format!("s{i}"), *l2).unwrap();
        }
        let v = Verifier {
            oracle: &mock,
            corpus: &c,
            text: routes(Prompting::TwoLevel),
            vision: routes(Prompting::TwoLevel),
            tie_priority: TiePriority::default(),
        };
        let ids: Vec<String> = (0..answers.len()).map(|i| format!("s{i}")).collect();
        let pairs = form_pairs("c1", &ids, &[], &c, PairModality::TextOnly, CompanionCaps::default(), &no_scores).unwrap();
        let verdict = v.verify_claim(&Claim::new("c1", "claim"), &pairs).unwrap();
        prop_assert_eq!(verdict.votes.len(), pairs.len());
        let mut expected_calls = 0;
        for vote in &verdict.votes {
            let trace = vote.level_trace.unwrap();
            expected_calls += 1;
            if vote.label == VerdictLabel::Nei {
                prop_assert!(trace.level1 != TokenClass::Yes && trace.level2.is_none());
            } else {
                expected_calls += 1;
                prop_assert_eq!(trace.level1, TokenClass::Yes);
                prop_assert!(trace.level2.is_some());
            }
        }
        prop_assert_eq!(mock.calls(), expected_calls);
    }

    #[test]
    fn every_pair_votes_or_is_reported(scripted in prop::collection::vec(any::<bool>(), 0..8)) {
        let c = corpus(scripted.len().max(1));
        let mut mock = MockOracle::new(MockFallback::Error);
        for (i, has) in scripted.iter().enumerate() {
            if *has {
                let m = ClassMass::from_named(0.5, 0.3, 0.1).unwrap();
                mock.insert(Task::Verify, "c1", &format!("s{i}"), OracleResponse::new(TokenClass::Yes, m, 0.5).unwrap()).unwrap();
            }
        }
        let v = Verifier {
            oracle: &mock,
            corpus: &c,
            text: routes(Prompting::OneLevel),
            vision: routes(Prompting::OneLevel),
            tie_priority: TiePriority::default(),
        };
        let ids: Vec<String> = (0..scripted.len()).map(|i| format!("s{i}")).collect();
        let pairs = form_pairs("c1", &ids, &[], &c, PairModality::TextOnly, CompanionCaps::default(), &no_scores).unwrap();
        let verdict = v.verify_claim(&Claim::new("c1", "claim"), &pairs).unwrap();
        prop_assert_eq!(verdict.votes.len() + verdict.failed_pairs.len(), pairs.len());
        prop_assert_eq!(verdict.votes.len(), scripted.iter().filter(|b| **b).count());
        if verdict.votes.is_empty() {
            prop_assert_eq!(verdict.label, VerdictLabel::Nei);
            prop_assert_eq!(verdict.decision_basis, DecisionBasis::NoEvidence);
        }
    }
}
