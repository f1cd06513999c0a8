mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tpet_core::dsl::{evaluate, mutate_ast, parse_text, random_program, render, Mutation, MutationKind, MutationParams, Signature};

use common::random_facts;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn render_then_parse_is_identity(seed in any::<u64>(), n in 2usize..=8, numeric in any::<bool>()) {
        let sig = if numeric { Signature::new(n).numeric_only() } else { Signature::new(n) };
        let program = random_program(&mut ChaCha8Rng::seed_from_u64(seed), &sig);
        let text = render(&program);
        let back = parse_text(&text, &sig);
        prop_assert!(back.is_ok(), "{}\n{:?}", text, back);
        let back = back.unwrap();
        prop_assert_eq!(&back, &program, "{}", text);
        prop_assert_eq!(render(&back), text);
    }

    #[test]
    fn evaluation_is_total(seed in any::<u64>(), n in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sig = Signature::new(n);
        let program = random_program(&mut rng, &sig);
        for _ in 0..100 {
            let facts = random_facts(&mut rng, n);
            let phase = evaluate(&program, &facts);
            prop_assert!(phase < n, "phase {} out of range for\n{}", phase, render(&program));
            prop_assert_eq!(evaluate(&program, &facts), phase);
        }
    }

    #[test]
    fn mutation_is_deterministic_and_stays_valid(seed in any::<u64>(), edit in any::<u64>(), n in 2usize..=6, kind in 0usize..6, bias in 0.0f64..1.0) {
        let sig = Signature::new(n);
        let program = random_program(&mut ChaCha8Rng::seed_from_u64(seed), &sig);
        let params = MutationParams { starvation_bias: bias, ..MutationParams::default() };
        let kind = MutationKind::ALL[kind];
        let a = mutate_ast(&program, &sig, edit, kind, &params);
        let b = mutate_ast(&program, &sig, edit, kind, &params);
        prop_assert_eq!(&a, &b);
        match a {
            Mutation::Applied(p) => {
                let text = render(&p);
                let back = parse_text(&text, &sig);
                prop_assert!(back.is_ok(), "{:?} produced invalid\n{}\n{:?}", kind, text, back);
                prop_assert_eq!(back.unwrap(), p);
            }
            Mutation::NoOp { reason } => prop_assert!(!reason.is_empty()),
        }
    }

    #[test]
    fn parser_never_panics(text in "[ -~\n]{0,120}") {
        let _ = parse_text(&text, &Signature::new(4));
    }
}
