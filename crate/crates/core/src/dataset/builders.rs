//! The split builders.

use super::sampler::{sample_compositional, whole_compositional_pool};
use super::{
    allocate_counts, DatasetProvenance, DatasetSpec, DistributionScheme, Exposure, ForgeError,
    GridSpec, Split,
};
use crate::grammar::{
    self, colors_canonical_split as colors_items, enumerate_commands, extend_with_role,
    interpret, interpret_scan, ActionSequence, Command, Example, ExampleKind, Grammar,
    GrammarFamily, PrimitiveEntry, PrimitiveRole,
};

/// Published training-set size of the 100-example-primitive uniform setting
/// (13,084 compositional examples plus 100 example definitions and the
/// isolated definition). The multi-isolated construction grows it by one
/// definition per extra isolated primitive: 13,194 at ten.
pub const MULTI_ISOLATED_BASE_TRAIN_SIZE: usize = 13_185;

/// Size of the original add-jump training set (the usual |T| cap).
pub const ORIGINAL_SCAN_CAP: usize = 13_204;

/// The four implicit-exposure sentences, by complexity 1..=4.
pub fn implicit_sentence(complexity: u8) -> Result<Command, ForgeError> {
    let text = match complexity {
        1 => "jump twice",
        2 => "jump thrice and look",
        3 => "run twice after jump opposite left",
        4 => "jump around left and walk opposite left twice",
        _ => {
            return Err(ForgeError::InvalidSpec(format!(
                "implicit complexity {complexity} outside 1..=4"
            )))
        }
    };
    Ok(Command::from_str(text))
}

fn classify(input: Command, output: ActionSequence) -> Example {
    let kind = if input.tokens().len() == 1 {
        ExampleKind::PrimitiveDefinition
    } else {
        ExampleKind::Compositional
    };
    Example::new(input, output, kind)
}

fn interpret_all(grammar: &Grammar, commands: Vec<Command>) -> Result<Vec<Example>, ForgeError> {
    commands
        .into_iter()
        .map(|c| {
            let out = interpret(grammar, &c)?;
            Ok(classify(c, out))
        })
        .collect()
}

fn sort_examples(examples: &mut [Example]) {
    examples.sort_unstable_by(|a, b| a.input.cmp(&b.input));
}

/// The original SCAN add-jump split: all 13,203 commands over walk/look/run
/// plus the single jump definition against the 7,706 jump-composing test
/// commands.
pub fn build_add_jump_split() -> Result<Split, ForgeError> {
    let full = Grammar::scan();
    let example = full.restricted_to(&["walk", "look", "run"])?;
    let mut train = interpret_all(&example, enumerate_commands(&example)?)?;
    let jump = full.primitive("jump")?.clone();
    train.push(grammar::primitive_definition(&jump));
    sort_examples(&mut train);

    let test = interpret_all(&full, grammar::commands_containing(&full, "jump")?)?;
    let split = Split {
        train,
        test,
        isolated: vec![jump],
        provenance: DatasetProvenance::AddJump,
    };
    split.validate_systematicity()?;
    Ok(split)
}

/// The canonical Colors split (14 train / 8 test, isolated primitive zup).
pub fn colors_canonical_split() -> Split {
    let (train, test) = colors_items();
    let zup = Grammar::colors().primitive("zup").expect("builtin").clone();
    Split {
        train,
        test,
        isolated: vec![zup],
        provenance: DatasetProvenance::ColorsCanonical,
    }
}

/// Extends the base grammar so the requested number of fresh example
/// primitives (and possibly extra isolated primitives) exist.
fn extended_grammar(spec: &DatasetSpec) -> Result<Grammar, ForgeError> {
    let base = match spec.base {
        GrammarFamily::Scan => Grammar::scan(),
        GrammarFamily::Colors => Grammar::colors(),
    };
    let g = extend_with_role(&base, spec.extra_primitives, spec.seed, PrimitiveRole::Example)?;
    let extra_isolated = spec.isolated_count.saturating_sub(1);
    Ok(extend_with_role(
        &g,
        extra_isolated,
        spec.seed,
        PrimitiveRole::Isolated,
    )?)
}

fn lexicographic_example_surfaces(grammar: &Grammar) -> Vec<String> {
    let mut surfaces: Vec<String> = grammar
        .example_primitives()
        .map(|p| p.surface.clone())
        .collect();
    surfaces.sort_unstable();
    surfaces
}

/// Builds a SCAN or Colors training-set variant from a declarative spec.
///
/// SCAN: the grammar is extended with fresh example primitives, per-primitive
/// compositional quotas follow the allocation scheme, every primitive keeps
/// its definition, isolated primitives appear only through their exposure,
/// and the test set stays the untouched original. Colors: each added
/// primitive contributes its definition plus one instance of each operator
/// template.
pub fn build_injected_split(spec: &DatasetSpec) -> Result<Split, ForgeError> {
    spec.validate()?;
    match spec.base {
        GrammarFamily::Scan => build_injected_scan(spec),
        GrammarFamily::Colors => build_injected_colors(spec),
    }
}

fn build_injected_scan(spec: &DatasetSpec) -> Result<Split, ForgeError> {
    let full = extended_grammar(spec)?;
    let isolated: Vec<PrimitiveEntry> = full.isolated_primitives().cloned().collect();
    let example_surfaces = lexicographic_example_surfaces(&full);
    let example_grammar = full.restricted_to(
        &example_surfaces
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>(),
    )?;
    let n = example_surfaces.len();

    // Allocation interprets the cap as covering example definitions plus ONE
    // isolated definition; extra isolated definitions shrink the cap.
    let effective_cap = spec
        .size_cap
        .map(|c| c.saturating_sub(spec.isolated_count.saturating_sub(1)));
    let counts = allocate_counts(&spec.scheme, n, effective_cap)?;
    let want: usize = counts.iter().sum();

    // Per-primitive feasibility: a quota can never exceed the primitive's
    // own compositional inventory (closed form over the example grammar).
    let s_phrases = 21 * n + 18;
    let per_primitive_inventory = 20 + 2 * (21 * s_phrases + (s_phrases - 21) * 21);
    if let Some((i, &q)) = counts
        .iter()
        .enumerate()
        .find(|(_, &q)| q > per_primitive_inventory)
    {
        return Err(ForgeError::InfeasibleAllocation(format!(
            "primitive '{}' has {per_primitive_inventory} compositional commands, quota is {q}",
            example_surfaces[i]
        )));
    }

    // Saturated regime: the budget covers the whole compositional pool, so
    // take all of it (this reproduces add-jump exactly when no primitives
    // are added and the cap is the original size).
    let pool_size = Grammar::scan_command_count(n) - n;
    let commands = if want >= pool_size {
        whole_compositional_pool(&example_grammar)?
    } else {
        sample_compositional(&example_grammar, &example_surfaces, &counts, spec.seed)?
    };

    let mut train = interpret_all(&example_grammar, commands)?;
    for surface in &example_surfaces {
        train.push(grammar::primitive_definition(full.primitive(surface)?));
    }
    let mut removed_from_test: Option<String> = None;
    for (i, iso) in isolated.iter().enumerate() {
        match spec.exposure {
            Exposure::Definition => train.push(grammar::primitive_definition(iso)),
            Exposure::ImplicitSentence { complexity } => {
                if i == 0 && iso.surface == "jump" {
                    let cmd = implicit_sentence(complexity)?;
                    let out = interpret_scan(&full, &cmd)?;
                    removed_from_test = Some(cmd.joined());
                    train.push(Example::new(cmd, out, ExampleKind::Compositional));
                } else {
                    // Extra isolated primitives fall back to definitions;
                    // the implicit sentences are jump-specific.
                    train.push(grammar::primitive_definition(iso));
                }
            }
        }
    }
    sort_examples(&mut train);

    let base_test = build_add_jump_split()?.test;
    let test = match &removed_from_test {
        Some(joined) => base_test
            .into_iter()
            .filter(|e| e.input.joined() != *joined)
            .collect(),
        None => base_test,
    };

    let split = Split {
        train,
        test,
        isolated,
        provenance: DatasetProvenance::Spec(spec.clone()),
    };
    split.validate_systematicity()?;
    if let Some(cap) = spec.size_cap {
        if split.train.len() > cap {
            return Err(ForgeError::InfeasibleAllocation(format!(
                "built train size {} exceeds cap {cap}",
                split.train.len()
            )));
        }
    }
    Ok(split)
}

fn build_injected_colors(spec: &DatasetSpec) -> Result<Split, ForgeError> {
    if spec.size_cap.is_some() {
        return Err(ForgeError::InvalidSpec(
            "Colors training sets are not size-capped".into(),
        ));
    }
    if !matches!(
        spec.scheme,
        DistributionScheme::Uniform {
            examples_per_primitive: None
        }
    ) {
        return Err(ForgeError::InvalidSpec(
            "Colors injection uses the fixed operator templates, not allocation schemes".into(),
        ));
    }
    if spec.isolated_count != 1 || spec.exposure != Exposure::Definition {
        return Err(ForgeError::InvalidSpec(
            "Colors injection supports one isolated primitive with definition exposure".into(),
        ));
    }
    let full = extended_grammar(spec)?;
    let canonical = colors_canonical_split();
    let mut train = canonical.train.clone();

    // Per added primitive: its definition plus one instance of each operator
    // (repetition, wrapping, concatenation), partners rotating over the
    // original example primitives.
    let partners = ["dax", "lug", "wif"];
    let added: Vec<&PrimitiveEntry> = full
        .example_primitives()
        .filter(|p| !["dax", "lug", "wif"].contains(&p.surface.as_str()))
        .collect();
    for (i, prim) in added.iter().enumerate() {
        train.push(grammar::primitive_definition(prim));
        let partner = partners[i % partners.len()];
        for template in [
            format!("{} fep", prim.surface),
            format!("{} blicket {partner}", prim.surface),
            format!("{} kiki {partner}", prim.surface),
        ] {
            let cmd = Command::from_str(&template);
            let out = interpret(&full, &cmd)?;
            train.push(classify(cmd, out));
        }
    }
    sort_examples(&mut train);

    let split = Split {
        train,
        test: canonical.test,
        isolated: canonical.isolated,
        provenance: DatasetProvenance::Spec(spec.clone()),
    };
    split.validate_systematicity()?;
    Ok(split)
}

/// One uniform split per `(#primitives, #examples)` cell.
pub fn build_grid(grid: &GridSpec) -> Result<Vec<(DatasetSpec, Split)>, ForgeError> {
    let mut out = Vec::with_capacity(grid.primitives_axis.len() * grid.examples_axis.len());
    for &p in &grid.primitives_axis {
        if p < 3 {
            return Err(ForgeError::InvalidSpec(format!(
                "grid cells keep the three original example primitives; {p} requested"
            )));
        }
        for &e in &grid.examples_axis {
            let spec = DatasetSpec {
                base: GrammarFamily::Scan,
                extra_primitives: p - 3,
                scheme: DistributionScheme::uniform_per_primitive(e),
                size_cap: None,
                exposure: Exposure::Definition,
                isolated_count: 1,
                seed: grid.seed,
            };
            let mut split = build_injected_split(&spec)?;
            split.provenance = DatasetProvenance::Grid {
                n_primitives: p,
                n_examples: e,
                seed: grid.seed,
            };
            out.push((spec, split));
        }
    }
    Ok(out)
}

/// The transfer experiment datasets: a pretraining set with 50 uniformly
/// distributed example primitives at 200 examples each, and the original
/// add-jump split for finetuning. Both share the original test set.
pub fn build_transfer_pair(seed: u64) -> Result<(Split, Split), ForgeError> {
    let spec = DatasetSpec {
        base: GrammarFamily::Scan,
        extra_primitives: 47,
        scheme: DistributionScheme::uniform_per_primitive(200),
        size_cap: None,
        exposure: Exposure::Definition,
        isolated_count: 1,
        seed,
    };
    let mut pretrain = build_injected_split(&spec)?;
    pretrain.provenance = DatasetProvenance::TransferPretrain { seed };
    let finetune = build_add_jump_split()?;
    Ok((pretrain, finetune))
}

/// The implicit-word-learning split: the isolated primitive is exposed
/// through one compositional sentence instead of its definition; that
/// sentence is removed from the test set.
pub fn build_implicit_split(complexity: u8, spec: &DatasetSpec) -> Result<Split, ForgeError> {
    let spec = DatasetSpec {
        exposure: Exposure::ImplicitSentence { complexity },
        ..spec.clone()
    };
    build_injected_split(&spec)
}

/// The multiple-isolated-primitives setting: the 100-example-primitive
/// uniform training set plus one definition per extra isolated primitive;
/// the test set instantiates every original test template with each
/// isolated primitive.
pub fn build_multi_isolated_split(n_isolated: usize, seed: u64) -> Result<Split, ForgeError> {
    if n_isolated == 0 {
        return Err(ForgeError::InvalidSpec(
            "need at least one isolated primitive".into(),
        ));
    }
    let spec = DatasetSpec {
        base: GrammarFamily::Scan,
        extra_primitives: 97,
        scheme: DistributionScheme::uniform_capped(),
        size_cap: Some(MULTI_ISOLATED_BASE_TRAIN_SIZE + n_isolated.saturating_sub(1)),
        exposure: Exposure::Definition,
        isolated_count: n_isolated,
        seed,
    };
    let mut split = build_injected_split(&spec)?;

    // Exhaustively instantiate the original jump test templates with every
    // isolated primitive (jump itself included).
    let base_test = std::mem::take(&mut split.test);
    let mut test = Vec::with_capacity(base_test.len() * n_isolated);
    for iso in &split.isolated {
        for e in &base_test {
            let input = Command(
                e.input
                    .tokens()
                    .iter()
                    .map(|t| {
                        if t == "jump" {
                            iso.surface.clone()
                        } else {
                            t.clone()
                        }
                    })
                    .collect(),
            );
            let output = ActionSequence(
                e.output
                    .tokens()
                    .iter()
                    .map(|t| {
                        if t == "JUMP" {
                            iso.action.clone()
                        } else {
                            t.clone()
                        }
                    })
                    .collect(),
            );
            test.push(Example::new(input, output, e.kind));
        }
    }
    sort_examples(&mut test);
    split.test = test;
    split.provenance = DatasetProvenance::MultiIsolated { n_isolated, seed };
    split.validate_systematicity()?;
    Ok(split)
}

/// The output-remap experiment: the add-jump split with every JUMP action
/// rewritten to WALK on both sides, input commands untouched.
pub fn build_remapped_split() -> Result<Split, ForgeError> {
    let base = build_add_jump_split()?;
    let rewrite = |examples: Vec<Example>| -> Vec<Example> {
        examples
            .into_iter()
            .map(|e| {
                let output = ActionSequence(
                    e.output
                        .tokens()
                        .iter()
                        .map(|t| {
                            if t == "JUMP" {
                                "WALK".to_string()
                            } else {
                                t.clone()
                            }
                        })
                        .collect(),
                );
                Example::new(e.input, output, e.kind)
            })
            .collect()
    };
    Ok(Split {
        train: rewrite(base.train),
        test: rewrite(base.test),
        isolated: vec![PrimitiveEntry::new("jump", "WALK", PrimitiveRole::Isolated)],
        provenance: DatasetProvenance::Remap,
    })
}

/// A random (non-systematic) split of the full SCAN command set; sanity
/// baseline for capacity sweeps.
pub fn build_random_split(train_fraction: f64, seed: u64) -> Result<Split, ForgeError> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(ForgeError::InvalidSpec(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let full = Grammar::scan();
    let mut all = interpret_all(&full, enumerate_commands(&full)?)?;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let n_train = ((all.len() as f64) * train_fraction).round() as usize;
    let test = all.split_off(n_train);
    let mut train = all;
    sort_examples(&mut train);
    let mut test = test;
    sort_examples(&mut test);
    Ok(Split {
        train,
        test,
        isolated: vec![],
        provenance: DatasetProvenance::Random {
            train_fraction,
            seed,
        },
    })
}
