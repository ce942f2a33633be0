//! Combinatorial oracles for the grammar and every split builder: closed-form
//! counts against brute force, golden interpretations, systematicity, size
//! bookkeeping, and file-format round trips.

use scanlab_core::dataset::{
    build_add_jump_split, build_grid, build_implicit_split, build_injected_split,
    build_multi_isolated_split, build_random_split, build_remapped_split, build_transfer_pair,
    colors_canonical_split, read_dataset, write_dataset, DatasetSpec, DistributionScheme,
    Exposure, ForgeError, GridSpec, ORIGINAL_SCAN_CAP,
};
use scanlab_core::grammar::{
    commands_containing, enumerate_commands, extend_with_primitives, interpret_scan, Command,
    ExampleKind, Grammar, GrammarError, GrammarFamily, PrimitiveEntry, PrimitiveRole,
};
use std::collections::{BTreeMap, BTreeSet, HashSet};

fn grammar_with_k(k: usize) -> Grammar {
    let base = ["walk", "look", "run", "jump"];
    let mut prims: Vec<PrimitiveEntry> = base
        .iter()
        .take(k.min(4))
        .map(|s| PrimitiveEntry::new(s, &s.to_ascii_uppercase(), PrimitiveRole::Example))
        .collect();
    let extra = ["swim", "clap", "dance", "float"];
    for s in extra.iter().take(k.saturating_sub(4)) {
        prims.push(PrimitiveEntry::new(
            s,
            &s.to_ascii_uppercase(),
            PrimitiveRole::Example,
        ));
    }
    Grammar::new(GrammarFamily::Scan, prims).unwrap()
}

#[test]
fn count_law_matches_brute_force_enumeration() {
    for k in 1..=8 {
        let g = grammar_with_k(k);
        let commands = enumerate_commands(&g).unwrap();
        let s = 21 * k + 18;
        assert_eq!(commands.len(), s + 2 * s * s, "k={k}");
        assert_eq!(commands.len(), Grammar::scan_command_count(k), "k={k}");
        let distinct: BTreeSet<_> = commands.iter().collect();
        assert_eq!(distinct.len(), commands.len(), "k={k} duplicates");
        let mut sorted = commands.clone();
        sorted.sort();
        assert_eq!(sorted, commands, "k={k} enumeration order");
    }
}

#[test]
fn published_command_counts() {
    assert_eq!(enumerate_commands(&Grammar::scan()).unwrap().len(), 20_910);
    let k3 = Grammar::scan().restricted_to(&["walk", "look", "run"]).unwrap();
    assert_eq!(enumerate_commands(&k3).unwrap().len(), 13_203);
    let k5 = extend_with_primitives(&Grammar::scan(), 1, 0).unwrap();
    assert_eq!(enumerate_commands(&k5).unwrap().len(), 30_381);
}

#[test]
fn extend_identity_and_name_exhaustion() {
    let g = Grammar::scan();
    let same = extend_with_primitives(&g, 0, 123).unwrap();
    assert_eq!(same, g);
    let err = extend_with_primitives(&g, 10_000, 0);
    assert!(matches!(err, Err(GrammarError::NameExhaustion { .. })));
    // Fresh surfaces uppercase to fresh actions, deterministically per seed.
    let a = extend_with_primitives(&g, 5, 42).unwrap();
    let b = extend_with_primitives(&g, 5, 42).unwrap();
    assert_eq!(a, b);
    for p in a.primitives().iter().skip(4) {
        assert_eq!(p.action, p.surface.to_ascii_uppercase());
        assert_eq!(p.role, PrimitiveRole::Example);
    }
}

#[test]
fn jump_inventory_is_7706_and_symmetric() {
    let g = Grammar::scan();
    let jump = commands_containing(&g, "jump").unwrap();
    assert_eq!(jump.len(), 7_706);
    assert!(jump.iter().all(|c| c.contains_token("jump")));
    assert!(jump.iter().all(|c| c.tokens().len() > 1));
    let walk = commands_containing(&g, "walk").unwrap();
    assert_eq!(walk.len(), 7_706);

    let k3 = g.restricted_to(&["walk", "look", "run"]).unwrap();
    assert!(matches!(
        commands_containing(&k3, "jump"),
        Err(GrammarError::UnknownPrimitive(_))
    ));
}

#[test]
fn interpretation_homomorphisms_hold_on_all_k2_commands() {
    let g = grammar_with_k(2);
    let interp = |c: &Command| interpret_scan(&g, c).unwrap().0;
    for cmd in enumerate_commands(&g).unwrap() {
        let toks = cmd.tokens();
        let acts = interp(&cmd);
        assert!(!acts.is_empty(), "empty interpretation for '{cmd}'");
        if let Some(pos) = toks.iter().position(|t| t == "and") {
            let left = Command(toks[..pos].to_vec());
            let right = Command(toks[pos + 1..].to_vec());
            let mut want = interp(&left);
            want.extend(interp(&right));
            assert_eq!(acts, want, "and: {cmd}");
        } else if let Some(pos) = toks.iter().position(|t| t == "after") {
            let left = Command(toks[..pos].to_vec());
            let right = Command(toks[pos + 1..].to_vec());
            let mut want = interp(&right);
            want.extend(interp(&left));
            assert_eq!(acts, want, "after: {cmd}");
        } else if toks.last().map(|s| s.as_str()) == Some("twice") {
            let base = interp(&Command(toks[..toks.len() - 1].to_vec()));
            assert_eq!(acts.len(), 2 * base.len(), "twice: {cmd}");
            assert_eq!(acts, [base.clone(), base].concat());
        } else if toks.last().map(|s| s.as_str()) == Some("thrice") {
            let base = interp(&Command(toks[..toks.len() - 1].to_vec()));
            assert_eq!(acts.len(), 3 * base.len(), "thrice: {cmd}");
            assert_eq!(acts, [base.clone(), base.clone(), base].concat());
        }
    }
}

#[test]
fn parser_and_enumerator_agree_on_membership() {
    let g = grammar_with_k(2);
    let language: HashSet<String> = enumerate_commands(&g)
        .unwrap()
        .iter()
        .map(|c| c.joined())
        .collect();
    let vocab: Vec<&str> = vec![
        "walk", "look", "twice", "thrice", "and", "after", "opposite", "around", "left", "right",
        "turn",
    ];
    // Exhaustive over all strings up to length 4, then seeded random strings
    // up to the maximum command length of 9.
    let mut stack: Vec<Vec<&str>> = vec![vec![]];
    for len in 1..=4 {
        let mut next = Vec::new();
        for prefix in &stack {
            for w in &vocab {
                let mut s = prefix.clone();
                s.push(w);
                next.push(s);
            }
        }
        for s in &next {
            let cmd = Command(s.iter().map(|w| w.to_string()).collect());
            let parsed = interpret_scan(&g, &cmd).is_ok();
            assert_eq!(
                parsed,
                language.contains(&cmd.joined()),
                "membership disagreement at len {len}: '{}'",
                cmd.joined()
            );
        }
        stack = next;
    }
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2024);
    for _ in 0..30_000 {
        let len = rng.random_range(5..=9);
        let toks: Vec<String> = (0..len)
            .map(|_| vocab[rng.random_range(0..vocab.len())].to_string())
            .collect();
        let cmd = Command(toks);
        let parsed = interpret_scan(&g, &cmd).is_ok();
        assert_eq!(
            parsed,
            language.contains(&cmd.joined()),
            "membership disagreement: '{}'",
            cmd.joined()
        );
    }
}

#[test]
fn primitive_symmetry_under_renaming() {
    let g = grammar_with_k(2); // walk, look
    let renamed = Grammar::new(
        GrammarFamily::Scan,
        vec![
            PrimitiveEntry::new("swim", "SWIM", PrimitiveRole::Example),
            PrimitiveEntry::new("look", "LOOK", PrimitiveRole::Example),
        ],
    )
    .unwrap();
    for cmd in enumerate_commands(&g).unwrap() {
        let orig = interpret_scan(&g, &cmd).unwrap();
        let swapped = Command(
            cmd.tokens()
                .iter()
                .map(|t| {
                    if t == "walk" {
                        "swim".to_string()
                    } else {
                        t.clone()
                    }
                })
                .collect(),
        );
        let got = interpret_scan(&renamed, &swapped).unwrap();
        let want: Vec<String> = orig
            .tokens()
            .iter()
            .map(|t| {
                if t == "WALK" {
                    "SWIM".to_string()
                } else {
                    t.clone()
                }
            })
            .collect();
        assert_eq!(got.0, want, "command: {cmd}");
    }
}

#[test]
fn add_jump_split_published_sizes() {
    let split = build_add_jump_split().unwrap();
    assert_eq!(split.train.len(), 13_204);
    assert_eq!(split.test.len(), 7_706);
    let jump_train: Vec<_> = split
        .train
        .iter()
        .filter(|e| e.input.contains_token("jump"))
        .collect();
    assert_eq!(jump_train.len(), 1);
    assert_eq!(jump_train[0].kind, ExampleKind::PrimitiveDefinition);
    assert_eq!(jump_train[0].output.joined(), "JUMP");
    split.validate_systematicity().unwrap();

    // Table goldens appear with their gold outputs in the test set.
    let golden: BTreeMap<&str, &str> = [
        ("jump twice after look", "LOOK JUMP JUMP"),
        ("jump right twice", "RTURN JUMP RTURN JUMP"),
        ("turn left and jump", "LTURN JUMP"),
    ]
    .into_iter()
    .collect();
    for e in &split.test {
        if let Some(want) = golden.get(e.input.joined().as_str()) {
            assert_eq!(e.output.joined(), *want);
        }
    }
}

#[test]
fn colors_canonical_sizes() {
    let split = colors_canonical_split();
    assert_eq!(split.train.len(), 14);
    assert_eq!(split.test.len(), 8);
    split.validate_systematicity().unwrap();
}

#[test]
fn injected_degenerate_case_reduces_to_add_jump() {
    let spec = DatasetSpec::scan_uniform(0, ORIGINAL_SCAN_CAP, 5);
    let split = build_injected_split(&spec).unwrap();
    let add_jump = build_add_jump_split().unwrap();
    assert_eq!(split.train, add_jump.train);
    assert_eq!(split.test, add_jump.test);
}

#[test]
fn injected_hundred_primitives_exact_cap_and_systematicity() {
    let spec = DatasetSpec::scan_uniform(97, ORIGINAL_SCAN_CAP, 11);
    let split = build_injected_split(&spec).unwrap();
    // 13,103 compositional + 100 example definitions + 1 jump definition.
    assert_eq!(split.train.len(), 13_204);
    assert_eq!(split.test.len(), 7_706);
    split.validate_systematicity().unwrap();
    let defs = split
        .train
        .iter()
        .filter(|e| e.kind == ExampleKind::PrimitiveDefinition)
        .count();
    assert_eq!(defs, 101);
    assert_eq!(
        split
            .train
            .iter()
            .filter(|e| e.input.contains_token("jump"))
            .count(),
        1
    );
    // Test set unchanged byte-for-byte.
    let add_jump = build_add_jump_split().unwrap();
    assert_eq!(split.test, add_jump.test);
}

#[test]
fn injected_seed_determinism() {
    let a = build_injected_split(&DatasetSpec::scan_uniform(20, ORIGINAL_SCAN_CAP, 9)).unwrap();
    let b = build_injected_split(&DatasetSpec::scan_uniform(20, ORIGINAL_SCAN_CAP, 9)).unwrap();
    assert_eq!(a, b);
    let c = build_injected_split(&DatasetSpec::scan_uniform(20, ORIGINAL_SCAN_CAP, 10)).unwrap();
    assert_ne!(a.train, c.train);
}

#[test]
fn distribution_schemes_allocate_exactly() {
    for scheme in [
        DistributionScheme::Linear,
        DistributionScheme::Quadratic,
        DistributionScheme::skewed(),
    ] {
        let spec = DatasetSpec {
            base: GrammarFamily::Scan,
            extra_primitives: 7, // 10 example primitives
            scheme,
            size_cap: None,
            exposure: Exposure::Definition,
            isolated_count: 1,
            seed: 3,
        };
        let split = build_injected_split(&spec).unwrap();
        split.validate_systematicity().unwrap();
        let expected_comp: usize =
            scanlab_core::dataset::allocate_counts(&scheme, 10, None)
                .unwrap()
                .iter()
                .sum();
        let defs = split
            .train
            .iter()
            .filter(|e| e.kind == ExampleKind::PrimitiveDefinition)
            .count();
        assert_eq!(defs, 11, "{}", scheme.name());
        assert_eq!(
            split.train.len(),
            expected_comp + 11,
            "{} train size",
            scheme.name()
        );
        let add_jump = build_add_jump_split().unwrap();
        assert_eq!(split.test, add_jump.test, "{} test set", scheme.name());
    }
}

#[test]
fn grid_cells_have_product_sizes() {
    let grid = GridSpec {
        primitives_axis: vec![10, 50],
        examples_axis: vec![0, 40],
        seed: 1,
    };
    let cells = build_grid(&grid).unwrap();
    assert_eq!(cells.len(), 4);
    for (spec, split) in &cells {
        split.validate_systematicity().unwrap();
        let p = spec.extra_primitives + 3;
        let e = match spec.scheme {
            DistributionScheme::Uniform {
                examples_per_primitive: Some(e),
            } => e,
            _ => unreachable!(),
        };
        let comp = split
            .train
            .iter()
            .filter(|x| x.kind == ExampleKind::Compositional)
            .count();
        assert_eq!(comp, p * e, "cell ({p}, {e}) compositional count");
        assert_eq!(split.train.len(), p * e + p + 1, "cell ({p}, {e}) total");
    }
}

#[test]
fn grid_saturated_cell_recovers_original_training_set() {
    let grid = GridSpec {
        primitives_axis: vec![3],
        examples_axis: vec![4_401],
        seed: 0,
    };
    let cells = build_grid(&grid).unwrap();
    let split = &cells[0].1;
    let add_jump = build_add_jump_split().unwrap();
    assert_eq!(split.train, add_jump.train);
}

#[test]
fn grid_infeasible_cell_errors() {
    let grid = GridSpec {
        primitives_axis: vec![3],
        examples_axis: vec![6_000],
        seed: 0,
    };
    assert!(matches!(
        build_grid(&grid),
        Err(ForgeError::InfeasibleAllocation(_))
    ));
}

#[test]
fn transfer_pair_published_sizes() {
    let (pretrain, finetune) = build_transfer_pair(17).unwrap();
    let comp = pretrain
        .train
        .iter()
        .filter(|e| e.kind == ExampleKind::Compositional)
        .count();
    assert_eq!(comp, 10_000);
    assert_eq!(pretrain.train.len(), 10_051);
    assert_eq!(finetune.train.len(), 13_204);
    assert_eq!(finetune.test.len(), 7_706);
    assert_eq!(pretrain.test, finetune.test);
    pretrain.validate_systematicity().unwrap();
}

#[test]
fn implicit_exposure_replaces_definition() {
    let sentences = [
        (1, "jump twice", "JUMP JUMP"),
        (2, "jump thrice and look", "JUMP JUMP JUMP LOOK"),
        (
            3,
            "run twice after jump opposite left",
            "LTURN LTURN JUMP RUN RUN",
        ),
        (
            4,
            "jump around left and walk opposite left twice",
            "LTURN JUMP LTURN JUMP LTURN JUMP LTURN JUMP LTURN LTURN WALK LTURN LTURN WALK",
        ),
    ];
    for (complexity, sentence, output) in sentences {
        let spec = DatasetSpec::scan_uniform(0, ORIGINAL_SCAN_CAP, 2);
        let split = build_implicit_split(complexity, &spec).unwrap();
        split.validate_systematicity().unwrap();
        let jump_train: Vec<_> = split
            .train
            .iter()
            .filter(|e| e.input.contains_token("jump"))
            .collect();
        assert_eq!(jump_train.len(), 1, "complexity {complexity}");
        assert_eq!(jump_train[0].input.joined(), sentence);
        assert_eq!(jump_train[0].output.joined(), output);
        assert_eq!(jump_train[0].kind, ExampleKind::Compositional);
        // The exposure sentence left the test set.
        assert_eq!(split.test.len(), 7_705, "complexity {complexity}");
        assert!(split.test.iter().all(|e| e.input.joined() != sentence));
    }
}

#[test]
fn multi_isolated_published_sizes() {
    let split = build_multi_isolated_split(10, 23).unwrap();
    assert_eq!(split.train.len(), 13_194);
    assert_eq!(split.test.len(), 77_060);
    assert_eq!(split.isolated.len(), 10);
    split.validate_systematicity().unwrap();

    // Factorization: restricting to one isolated primitive recovers a
    // 7,706-example set isomorphic to the original test under renaming.
    let original = build_add_jump_split().unwrap();
    for iso in &split.isolated {
        let restricted: BTreeSet<(String, String)> = split
            .test
            .iter()
            .filter(|e| e.input.contains_token(&iso.surface))
            .map(|e| (e.input.joined(), e.output.joined()))
            .collect();
        assert_eq!(restricted.len(), 7_706, "primitive {}", iso.surface);
        let renamed: BTreeSet<(String, String)> = original
            .test
            .iter()
            .map(|e| {
                (
                    e.input
                        .joined()
                        .split(' ')
                        .map(|t| if t == "jump" { iso.surface.as_str() } else { t })
                        .collect::<Vec<_>>()
                        .join(" "),
                    e.output
                        .joined()
                        .split(' ')
                        .map(|t| if t == "JUMP" { iso.action.as_str() } else { t })
                        .collect::<Vec<_>>()
                        .join(" "),
                )
            })
            .collect();
        assert_eq!(restricted, renamed, "primitive {}", iso.surface);
    }
}

#[test]
fn multi_isolated_base_case_sizes() {
    let split = build_multi_isolated_split(1, 23).unwrap();
    assert_eq!(split.train.len(), 13_185);
    assert_eq!(split.test.len(), 7_706);
}

#[test]
fn remap_rewrites_outputs_only() {
    let split = build_remapped_split().unwrap();
    assert_eq!(split.train.len(), 13_204);
    assert_eq!(split.test.len(), 7_706);
    split.validate_systematicity().unwrap();
    let def = split
        .train
        .iter()
        .find(|e| e.input.joined() == "jump")
        .unwrap();
    assert_eq!(def.output.joined(), "WALK");
    let golden = split
        .test
        .iter()
        .find(|e| e.input.joined() == "jump right twice")
        .unwrap();
    assert_eq!(golden.output.joined(), "RTURN WALK RTURN WALK");
    for e in split.train.iter().chain(&split.test) {
        assert!(!e.output.tokens().iter().any(|t| t == "JUMP"));
    }
}

#[test]
fn random_split_partitions_everything() {
    let split = build_random_split(0.8, 7).unwrap();
    assert_eq!(split.train.len() + split.test.len(), 20_910);
    assert_eq!(split.train.len(), 16_728);
    assert!(split.isolated.is_empty());
    let train: HashSet<String> = split.train.iter().map(|e| e.input.joined()).collect();
    assert!(split.test.iter().all(|e| !train.contains(&e.input.joined())));
    let again = build_random_split(0.8, 7).unwrap();
    assert_eq!(split, again);
}

#[test]
fn dataset_io_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let split = build_injected_split(&DatasetSpec::scan_uniform(5, ORIGINAL_SCAN_CAP, 1)).unwrap();
    let path = dir.path().join("ds");
    write_dataset(&split, &path).unwrap();
    let loaded = read_dataset(&path).unwrap();
    assert_eq!(split, loaded);

    // Byte determinism: writing the same split twice gives identical files.
    let path2 = dir.path().join("ds2");
    write_dataset(&split, &path2).unwrap();
    assert_eq!(
        std::fs::read(path.join("train.txt")).unwrap(),
        std::fs::read(path2.join("train.txt")).unwrap()
    );

    // A golden line parses to the expected example.
    let contents = std::fs::read_to_string(path.join("test.txt")).unwrap();
    assert!(contents.contains("IN: jump twice after look OUT: LOOK JUMP JUMP"));

    // Malformed line reports the line number.
    let bad = dir.path().join("bad");
    std::fs::create_dir_all(&bad).unwrap();
    for side in ["train.txt", "test.txt"] {
        std::fs::write(
            bad.join(side),
            "# format=scanlab.dataset.v1\n# provenance={\"kind\":\"add_jump\"}\n# isolated=jump:JUMP\nIN: walk twice\n",
        )
        .unwrap();
    }
    match read_dataset(&bad) {
        Err(ForgeError::MalformedLine { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected MalformedLine, got {other:?}"),
    }

    // Missing format header.
    let hdrless = dir.path().join("hdrless");
    std::fs::create_dir_all(&hdrless).unwrap();
    for side in ["train.txt", "test.txt"] {
        std::fs::write(hdrless.join(side), "IN: walk OUT: WALK\n").unwrap();
    }
    assert!(matches!(
        read_dataset(&hdrless),
        Err(ForgeError::MissingHeader(_))
    ));
}
