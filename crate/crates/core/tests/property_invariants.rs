//! Property tests over randomized grammars, splits, and files: the
//! interpretation homomorphisms, sampling determinism, systematicity, and
//! round-trip identities hold for arbitrary inputs, not just the shipped
//! settings.

use proptest::prelude::*;
use scanlab_core::dataset::{
    allocate_counts, build_injected_split, read_dataset, write_dataset, DatasetSpec,
    DistributionScheme, Exposure,
};
use scanlab_core::grammar::{
    commands_containing, enumerate_commands, extend_with_primitives, interpret_scan, Command,
    Grammar, GrammarFamily,
};

fn arb_scheme() -> impl Strategy<Value = DistributionScheme> {
    prop_oneof![
        Just(DistributionScheme::uniform_capped()),
        Just(DistributionScheme::Linear),
        Just(DistributionScheme::Quadratic),
        Just(DistributionScheme::skewed()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Extending by n fresh primitives obeys the closed-form count law.
    #[test]
    fn extension_respects_count_law(n in 0usize..4, seed in 0u64..1_000) {
        let g = extend_with_primitives(&Grammar::scan(), n, seed).unwrap();
        let k = g.primitive_count();
        let commands = enumerate_commands(&g).unwrap();
        prop_assert_eq!(commands.len(), Grammar::scan_command_count(k));
    }

    /// Repetition and concatenation homomorphisms hold on sampled commands
    /// of extended grammars.
    #[test]
    fn interpretation_homomorphisms(seed in 0u64..500, idx in 0usize..5_000) {
        let g = extend_with_primitives(&Grammar::scan(), 1, seed).unwrap();
        let commands = enumerate_commands(&g).unwrap();
        let cmd = &commands[idx % commands.len()];
        let acts = interpret_scan(&g, cmd).unwrap();
        prop_assert!(!acts.tokens().is_empty());
        let toks = cmd.tokens();
        if let Some(pos) = toks.iter().position(|t| t == "and" || t == "after") {
            let left = interpret_scan(&g, &Command(toks[..pos].to_vec())).unwrap();
            let right = interpret_scan(&g, &Command(toks[pos + 1..].to_vec())).unwrap();
            let want = if toks[pos] == "and" {
                [left.tokens(), right.tokens()].concat()
            } else {
                [right.tokens(), left.tokens()].concat()
            };
            prop_assert_eq!(acts.tokens(), want.as_slice());
        } else if toks.last().map(|t| t.as_str()) == Some("twice") {
            let base = interpret_scan(&g, &Command(toks[..toks.len() - 1].to_vec())).unwrap();
            prop_assert_eq!(acts.tokens().len(), 2 * base.tokens().len());
        } else if toks.last().map(|t| t.as_str()) == Some("thrice") {
            let base = interpret_scan(&g, &Command(toks[..toks.len() - 1].to_vec())).unwrap();
            prop_assert_eq!(acts.tokens().len(), 3 * base.tokens().len());
        }
    }

    /// Every allocation sums to the advertised totals and never goes
    /// negative or oversized under a cap.
    #[test]
    fn allocations_respect_caps(
        scheme in arb_scheme(),
        n in 4usize..40,
        cap in prop::option::of(2_000usize..14_000),
    ) {
        match allocate_counts(&scheme, n, cap) {
            Ok(counts) => {
                prop_assert_eq!(counts.len(), n);
                if let Some(cap) = cap {
                    let total: usize = counts.iter().sum();
                    prop_assert!(total + n + 1 <= cap + n,
                        "total {} breaches cap {}", total, cap);
                }
            }
            Err(_) => {
                // Capless uniform and degenerate skews are allowed to fail.
            }
        }
    }

    /// Injected splits keep systematicity and the untouched test set for
    /// arbitrary small specs and seeds.
    #[test]
    fn injected_splits_stay_systematic(
        extra in 0usize..12,
        seed in 0u64..200,
        scheme in arb_scheme(),
    ) {
        let capped = matches!(scheme, DistributionScheme::Uniform { examples_per_primitive: None });
        let spec = DatasetSpec {
            base: GrammarFamily::Scan,
            extra_primitives: extra,
            scheme,
            size_cap: capped.then_some(13_204),
            exposure: Exposure::Definition,
            isolated_count: 1,
            seed,
        };
        prop_assume!(spec.validate().is_ok());
        if matches!(spec.scheme, DistributionScheme::Skewed(_)) && extra + 3 < 4 {
            return Ok(());
        }
        let split = build_injected_split(&spec).unwrap();
        split.validate_systematicity().unwrap();
        prop_assert_eq!(split.test.len(), 7_706);
        if let Some(cap) = spec.size_cap {
            prop_assert!(split.train.len() <= cap);
        }
        // Identical spec -> identical split.
        let again = build_injected_split(&spec).unwrap();
        prop_assert_eq!(split, again);
    }

    /// Dataset files round-trip exactly for arbitrary injected splits.
    #[test]
    fn dataset_files_round_trip(extra in 0usize..6, seed in 0u64..100) {
        let spec = DatasetSpec {
            base: GrammarFamily::Scan,
            extra_primitives: extra,
            scheme: DistributionScheme::uniform_per_primitive(5),
            size_cap: None,
            exposure: Exposure::Definition,
            isolated_count: 1,
            seed,
        };
        let split = build_injected_split(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&split, dir.path()).unwrap();
        let loaded = read_dataset(dir.path()).unwrap();
        prop_assert_eq!(split, loaded);
    }

    /// The per-primitive inventory excludes the bare definition and contains
    /// the primitive in every command.
    #[test]
    fn inventories_are_well_formed(seed in 0u64..100) {
        let g = extend_with_primitives(&Grammar::scan(), 1, seed).unwrap();
        let fresh = g.primitives().last().unwrap().surface.clone();
        let cmds = commands_containing(&g, &fresh).unwrap();
        prop_assert!(!cmds.is_empty());
        for c in cmds.iter().take(200) {
            prop_assert!(c.contains_token(&fresh));
            prop_assert!(c.tokens().len() > 1);
        }
    }
}
