use std::sync::Arc;

use proptest::prelude::*;
use routegen_core::backend::{Backend, GenerationRequest, MockBackend, ReplayBackend, ReplayStore, GenerationResponse};
use routegen_core::evaluator::{aggregate, pass_at_k, TaskEvaluation};
use routegen_core::generator::extract_code;
use routegen_core::ledger::{run_totals, task_cost, Stage, TokenRecord};
use routegen_core::router::{parse_label, route, summarize, DifficultyLabel, RoutingDecision, RoutingSource, Strategy};
use routegen_core::sandbox::{ExecutionVerdict, VerdictStatus};

fn binom(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn evaluation(task_id: &str, n: u64, c: u64) -> TaskEvaluation {
    let verdicts = (0..n)
        .map(|i| ExecutionVerdict::new(if i < c { VerdictStatus::Pass } else { VerdictStatus::Fail }, ""))
        .collect();
    TaskEvaluation::from_verdicts(task_id, verdicts)
}

proptest! {
    #[test]
    fn pass_at_k_in_unit_interval_and_monotone(n in 1u64..60, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..=1.0) {
        let c = ((n as f64) * c_frac).floor() as u64;
        let k = 1 + ((n - 1) as f64 * k_frac).floor() as u64;
        let p = pass_at_k(n, c, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        if c < n {
            prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= p);
        }
        if k < n {
            prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= p);
        }
        if c == 0 {
            prop_assert_eq!(p, 0.0);
        }
        if n - c < k {
            prop_assert_eq!(p, 1.0);
        }
    }

    #[test]
    fn pass_at_k_matches_binomial_ratio(n in 1u64..40, c in 0u64..40, k in 1u64..40) {
        prop_assume!(c <= n && k <= n);
        let want = 1.0 - binom(n - c, k) / binom(n, k);
        let got = pass_at_k(n, c, k).unwrap();
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
    }

    #[test]
    fn pass_at_k_rejects_bad_domain(n in 0u64..20, extra in 1u64..5) {
        prop_assert!(pass_at_k(n, n + extra, 1).is_err());
        prop_assert!(pass_at_k(n, 0, n + extra).is_err());
        prop_assert!(pass_at_k(n, 0, 0).is_err());
    }

    #[test]
    fn aggregate_ignores_task_order(
        counts in prop::collection::vec((1u64..12, 0u64..12), 1..15),
        seed in any::<u64>(),
    ) {
        let evals: Vec<_> = counts
            .iter()
            .enumerate()
            .map(|(i, &(n, c))| evaluation(&format!("t{i:02}"), n, c.min(n)))
            .collect();
        let mut shuffled = evals.clone();
        // Deterministic Fisher-Yates from the seed.
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = aggregate(&evals, 1).unwrap();
        let b = aggregate(&shuffled, 1).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.per_task, b.per_task);
    }

    #[test]
    fn extract_code_is_deterministic_and_idempotent(
        preamble in prop::sample::select(vec!["", "import math\n", "from typing import List\n\n", "# helper\n"]),
        name in "[a-z][a-z_]{0,10}",
        body in prop::collection::vec("[a-z0-9 +*-]{1,20}", 1..5),
        chatter in prop::sample::select(vec!["", "Here is the code:\n", "Sure.\n\n"]),
        fenced in any::<bool>(),
    ) {
        let mut code = format!("{preamble}def {name}(x):\n");
        for line in &body {
            code.push_str(&format!("    y = {}\n", line.trim()));
        }
        code.push_str("    return x\n");
        let raw = if fenced {
            format!("{chatter}```python\n{code}```\nThat should work.")
        } else {
            format!("{chatter}{code}")
        };
        let once = extract_code(&raw).expect("code present");
        prop_assert_eq!(extract_code(&raw), Some(once.clone()));
        prop_assert_eq!(extract_code(&once), Some(once.clone()));
        let def_line = format!("def {}(x):", name);
        prop_assert!(once.contains(&def_line));
        prop_assert!(!once.contains("```"));
    }

    #[test]
    fn text_without_code_extracts_nothing(words in prop::collection::vec("[A-Za-z]{1,8}", 0..12)) {
        let text = words.join(" ");
        prop_assert_eq!(extract_code(&text), None);
    }

    #[test]
    fn routing_is_a_pure_function_of_the_label(reply in ".{0,80}") {
        let a = parse_label(&reply);
        let b = parse_label(&reply);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(route(a.label), route(b.label));
        let expected = match a.label {
            DifficultyLabel::Simple => Strategy::Direct,
            DifficultyLabel::Complex => Strategy::Icot,
        };
        prop_assert_eq!(route(a.label), expected);
        if a.parse_failure {
            prop_assert_eq!(a.label, DifficultyLabel::Complex);
        }
    }

    #[test]
    fn summary_partitions_the_task_set(labels in prop::collection::vec(any::<bool>(), 1..200)) {
        let decisions: Vec<RoutingDecision> = labels
            .iter()
            .enumerate()
            .map(|(i, &simple)| RoutingDecision {
                task_id: format!("t{i}"),
                label: if simple { DifficultyLabel::Simple } else { DifficultyLabel::Complex },
                rationale: String::new(),
                source: RoutingSource::ExternalLabel,
                raw_reply: String::new(),
                parse_failure: false,
            })
            .collect();
        let s = summarize(&decisions).unwrap();
        prop_assert_eq!(s.simple_count + s.complex_count, s.total);
        prop_assert_eq!(s.total, labels.len());
        prop_assert_eq!(s.simple_count, labels.iter().filter(|&&b| b).count());
        prop_assert_eq!(s.per_task.len(), labels.len());
    }

    #[test]
    fn cost_is_linear_in_transcript_records(
        prompt in 0u64..10_000,
        traces in prop::collection::vec((0u64..600, 0u64..5_000, 0u64..300), 1..25),
        routing in 0u64..500,
    ) {
        let mut t = vec![
            TokenRecord::new(Stage::RoutingPrompt, routing, "t", 0),
            TokenRecord::new(Stage::RoutingReply, 3, "t", 0),
            TokenRecord::new(Stage::IcotStage1Prompt, prompt, "t", 0),
        ];
        for (i, &(trace, _, _)) in traces.iter().enumerate() {
            t.push(TokenRecord::new(Stage::IcotTrace, trace, "t", i as u32 + 1));
        }
        for (i, &(_, p2, _)) in traces.iter().enumerate() {
            t.push(TokenRecord::new(Stage::IcotStage2Prompt, p2, "t", i as u32 + 1));
        }
        for (i, &(_, _, code)) in traces.iter().enumerate() {
            t.push(TokenRecord::new(Stage::IcotCode, code, "t", i as u32 + 1));
        }
        let c = task_cost("t", &t, Strategy::Icot).unwrap();
        let want_in = prompt + traces.iter().map(|x| x.1).sum::<u64>();
        let want_out = traces.iter().map(|x| x.0 + x.2).sum::<u64>();
        prop_assert_eq!((c.c_in, c.c_out, c.total), (want_in, want_out, want_in + want_out));
        prop_assert_eq!(c.routing_tokens, routing + 3);

        let doubled = run_totals([&c, &c]);
        let single = run_totals([&c]);
        prop_assert_eq!(doubled.total, 2 * single.total);
        prop_assert_eq!(single.total, c.total + c.routing_tokens);
    }

    #[test]
    fn replay_returns_what_was_recorded(
        prompts in prop::collection::vec("[a-z ]{1,30}", 1..8),
        n in 1u32..4,
    ) {
        let store = Arc::new(ReplayStore::in_memory());
        let live = MockBackend::from_fn("m", |req: &GenerationRequest| {
            let texts: Vec<String> = (0..req.n).map(|i| format!("{}#{i}", req.prompt_text)).collect();
            let toks = texts.iter().map(|t| t.len() as u64).collect();
            Ok(GenerationResponse::new(texts, req.prompt_text.len() as u64, toks, "m"))
        });
        let recorder = ReplayBackend::record(Box::new(live), store.clone());
        let requests: Vec<_> = prompts
            .iter()
            .enumerate()
            .map(|(i, p)| GenerationRequest::sampled(p.as_str(), 0.8, 0.95, n, 300).with_ordinal(i as u32))
            .collect();
        let recorded: Vec<_> = requests.iter().map(|r| recorder.generate(r).unwrap()).collect();
        let replay = ReplayBackend::replay("m", store);
        for (req, want) in requests.iter().zip(&recorded) {
            prop_assert_eq!(&replay.generate(req).unwrap(), want);
            prop_assert_eq!(&replay.generate(req).unwrap(), want);
        }
        let unseen = GenerationRequest::sampled("never recorded", 0.8, 0.95, n, 300).with_ordinal(999);
        prop_assert!(replay.generate(&unseen).is_err());
    }
}
