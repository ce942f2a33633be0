//! SCAN and Colors grammars: command enumeration and semantic interpretation.
//!
//! Both languages map token sequences ("commands") to action-token sequences
//! through a compositional interpretation function. The SCAN command language
//! is parameterized by its primitive inventory; with `k` primitives there are
//! exactly `S + 2*S^2` distinct commands where `S = 21k + 18`.

mod colors;
mod scan;
mod word_pool;

pub use colors::{colors_canonical_split, interpret_colors, parse_colors};
pub use scan::{interpret_scan, parse_scan, PhraseInventory, PrimitiveSampler};
pub use word_pool::word_pool;

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("command does not parse: '{0}'")]
    UngrammaticalCommand(String),
    #[error("unknown primitive '{0}'")]
    UnknownPrimitive(String),
    #[error("word pool exhausted: requested {requested} fresh words, {available} available")]
    NameExhaustion { requested: usize, available: usize },
    #[error("operation requires the {expected:?} family, grammar is {actual:?}")]
    WrongFamily {
        expected: GrammarFamily,
        actual: GrammarFamily,
    },
    #[error("invalid primitive entry: {0}")]
    InvalidPrimitive(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrammarFamily {
    Scan,
    Colors,
}

impl fmt::Display for GrammarFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrammarFamily::Scan => write!(f, "scan"),
            GrammarFamily::Colors => write!(f, "colors"),
        }
    }
}

/// Whether a primitive appears compositionally in training (`Example`) or
/// only through a single exposure (`Isolated`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveRole {
    Example,
    Isolated,
}

/// A single input word together with its one-token output mapping,
/// e.g. `walk -> WALK`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrimitiveEntry {
    pub surface: String,
    pub action: String,
    pub role: PrimitiveRole,
}

impl PrimitiveEntry {
    pub fn new(surface: &str, action: &str, role: PrimitiveRole) -> Self {
        Self {
            surface: surface.to_string(),
            action: action.to_string(),
            role,
        }
    }
}

/// An input command: an ordered list of surface tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Command(pub Vec<String>);

impl Command {
    /// Splits on whitespace; not the `FromStr` trait (construction is
    /// infallible).
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(s: &str) -> Self {
        Command(s.split_whitespace().map(|t| t.to_string()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.0.iter().any(|t| t == token)
    }

    pub fn joined(&self) -> String {
        self.0.join(" ")
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(" "))
    }
}

/// An output action sequence: an ordered list of action tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionSequence(pub Vec<String>);

impl ActionSequence {
    /// Splits on whitespace; not the `FromStr` trait (construction is
    /// infallible).
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(s: &str) -> Self {
        ActionSequence(s.split_whitespace().map(|t| t.to_string()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn joined(&self) -> String {
        self.0.join(" ")
    }
}

impl fmt::Display for ActionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(" "))
    }
}

/// Distinguishes bare `p -> P` definitions from compositional sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    PrimitiveDefinition,
    Compositional,
}

/// One supervised input/output pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub input: Command,
    pub output: ActionSequence,
    pub kind: ExampleKind,
}

impl Example {
    pub fn new(input: Command, output: ActionSequence, kind: ExampleKind) -> Self {
        Self {
            input,
            output,
            kind,
        }
    }
}

/// Function words of the SCAN command language.
pub const SCAN_FUNCTION_WORDS: [&str; 9] = [
    "twice", "thrice", "and", "after", "opposite", "around", "left", "right", "turn",
];

/// Function words (operators) of the Colors command language.
pub const COLORS_FUNCTION_WORDS: [&str; 3] = ["fep", "blicket", "kiki"];

/// A command grammar: a primitive inventory over a fixed rule family.
///
/// Immutable after construction; all derived quantities (command counts,
/// inventories) are pure functions of the primitive list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    family: GrammarFamily,
    primitives: Vec<PrimitiveEntry>,
}

impl Grammar {
    /// The original SCAN grammar: walk/look/run as example primitives and
    /// jump as the isolated primitive.
    pub fn scan() -> Self {
        Self::new(
            GrammarFamily::Scan,
            vec![
                PrimitiveEntry::new("walk", "WALK", PrimitiveRole::Example),
                PrimitiveEntry::new("look", "LOOK", PrimitiveRole::Example),
                PrimitiveEntry::new("run", "RUN", PrimitiveRole::Example),
                PrimitiveEntry::new("jump", "JUMP", PrimitiveRole::Isolated),
            ],
        )
        .expect("builtin scan grammar is valid")
    }

    /// The Colors grammar: dax/lug/wif as example primitives and zup isolated.
    pub fn colors() -> Self {
        Self::new(
            GrammarFamily::Colors,
            vec![
                PrimitiveEntry::new("dax", "RED", PrimitiveRole::Example),
                PrimitiveEntry::new("lug", "BLUE", PrimitiveRole::Example),
                PrimitiveEntry::new("wif", "GREEN", PrimitiveRole::Example),
                PrimitiveEntry::new("zup", "YELLOW", PrimitiveRole::Isolated),
            ],
        )
        .expect("builtin colors grammar is valid")
    }

    pub fn new(
        family: GrammarFamily,
        primitives: Vec<PrimitiveEntry>,
    ) -> Result<Self, GrammarError> {
        let function_words: &[&str] = match family {
            GrammarFamily::Scan => &SCAN_FUNCTION_WORDS,
            GrammarFamily::Colors => &COLORS_FUNCTION_WORDS,
        };
        let mut surfaces = BTreeSet::new();
        let mut actions = BTreeSet::new();
        for p in &primitives {
            if p.surface.is_empty()
                || !p
                    .surface
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c == '_')
            {
                return Err(GrammarError::InvalidPrimitive(format!(
                    "surface '{}' is not a single lowercase token",
                    p.surface
                )));
            }
            if p.action.is_empty()
                || !p
                    .action
                    .chars()
                    .all(|c| c.is_ascii_uppercase() || c == '_')
            {
                return Err(GrammarError::InvalidPrimitive(format!(
                    "action '{}' is not a single uppercase token",
                    p.action
                )));
            }
            if !surfaces.insert(p.surface.clone()) {
                return Err(GrammarError::InvalidPrimitive(format!(
                    "duplicate surface '{}'",
                    p.surface
                )));
            }
            if !actions.insert(p.action.clone()) {
                return Err(GrammarError::InvalidPrimitive(format!(
                    "duplicate action '{}'",
                    p.action
                )));
            }
            if function_words.contains(&p.surface.as_str()) {
                return Err(GrammarError::InvalidPrimitive(format!(
                    "surface '{}' collides with a function word",
                    p.surface
                )));
            }
        }
        if primitives.is_empty() {
            return Err(GrammarError::InvalidPrimitive(
                "grammar needs at least one primitive".into(),
            ));
        }
        Ok(Self { family, primitives })
    }

    pub fn family(&self) -> GrammarFamily {
        self.family
    }

    pub fn primitives(&self) -> &[PrimitiveEntry] {
        &self.primitives
    }

    /// Number of primitives (the `k` of the command-count law).
    pub fn primitive_count(&self) -> usize {
        self.primitives.len()
    }

    pub fn primitive(&self, surface: &str) -> Result<&PrimitiveEntry, GrammarError> {
        self.primitives
            .iter()
            .find(|p| p.surface == surface)
            .ok_or_else(|| GrammarError::UnknownPrimitive(surface.to_string()))
    }

    pub fn has_primitive(&self, surface: &str) -> bool {
        self.primitives.iter().any(|p| p.surface == surface)
    }

    pub fn example_primitives(&self) -> impl Iterator<Item = &PrimitiveEntry> {
        self.primitives
            .iter()
            .filter(|p| p.role == PrimitiveRole::Example)
    }

    pub fn isolated_primitives(&self) -> impl Iterator<Item = &PrimitiveEntry> {
        self.primitives
            .iter()
            .filter(|p| p.role == PrimitiveRole::Isolated)
    }

    pub fn function_words(&self) -> &'static [&'static str] {
        match self.family {
            GrammarFamily::Scan => &SCAN_FUNCTION_WORDS,
            GrammarFamily::Colors => &COLORS_FUNCTION_WORDS,
        }
    }

    /// Grammar over a subset of primitives, preserving order and roles.
    pub fn restricted_to(&self, surfaces: &[&str]) -> Result<Self, GrammarError> {
        let mut kept = Vec::new();
        for s in surfaces {
            kept.push(self.primitive(s)?.clone());
        }
        Self::new(self.family, kept)
    }

    /// Closed-form SCAN command count for `k` primitives: `S + 2*S^2`
    /// with `S = 21k + 18`.
    pub fn scan_command_count(k: usize) -> usize {
        let s = 21 * k + 18;
        s + 2 * s * s
    }
}

/// Extends a grammar with `n` fresh example primitives drawn from the shipped
/// word pool in seeded-shuffle order. Each new word maps to its uppercased
/// action token (`swim -> SWIM`).
pub fn extend_with_primitives(
    grammar: &Grammar,
    n: usize,
    rng_seed: u64,
) -> Result<Grammar, GrammarError> {
    extend_with_role(grammar, n, rng_seed, PrimitiveRole::Example)
}

/// Same as [`extend_with_primitives`] but the fresh words take a chosen role
/// (the multi-isolated construction adds extra `Isolated` primitives).
pub fn extend_with_role(
    grammar: &Grammar,
    n: usize,
    rng_seed: u64,
    role: PrimitiveRole,
) -> Result<Grammar, GrammarError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if n == 0 {
        return Ok(grammar.clone());
    }
    let mut pool: Vec<&str> = word_pool()
        .iter()
        .copied()
        .filter(|w| !grammar.has_primitive(w) && !grammar.function_words().contains(w))
        .collect();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(rng_seed);
    pool.shuffle(&mut rng);
    if pool.len() < n {
        return Err(GrammarError::NameExhaustion {
            requested: n,
            available: pool.len(),
        });
    }
    let mut primitives = grammar.primitives().to_vec();
    for w in pool.into_iter().take(n) {
        primitives.push(PrimitiveEntry::new(w, &w.to_ascii_uppercase(), role));
    }
    Grammar::new(grammar.family(), primitives)
}

/// The one-word training example `p -> P`.
pub fn primitive_definition(entry: &PrimitiveEntry) -> Example {
    Example::new(
        Command(vec![entry.surface.clone()]),
        ActionSequence(vec![entry.action.clone()]),
        ExampleKind::PrimitiveDefinition,
    )
}

/// Every distinct SCAN command, exactly once, in lexicographic token order.
pub fn enumerate_commands(grammar: &Grammar) -> Result<Vec<Command>, GrammarError> {
    if grammar.family() != GrammarFamily::Scan {
        return Err(GrammarError::WrongFamily {
            expected: GrammarFamily::Scan,
            actual: grammar.family(),
        });
    }
    let inv = PhraseInventory::build(grammar);
    let mut out = inv.all_commands();
    out.sort_unstable();
    Ok(out)
}

/// All distinct commands containing `primitive`, excluding the bare one-token
/// definition, in lexicographic order.
pub fn commands_containing(
    grammar: &Grammar,
    primitive: &str,
) -> Result<Vec<Command>, GrammarError> {
    if grammar.family() != GrammarFamily::Scan {
        return Err(GrammarError::WrongFamily {
            expected: GrammarFamily::Scan,
            actual: grammar.family(),
        });
    }
    grammar.primitive(primitive)?;
    let inv = PhraseInventory::build(grammar);
    let mut out = inv.commands_containing(primitive);
    out.sort_unstable();
    Ok(out)
}

/// Interprets a command under the grammar's family semantics.
pub fn interpret(grammar: &Grammar, command: &Command) -> Result<ActionSequence, GrammarError> {
    match grammar.family() {
        GrammarFamily::Scan => interpret_scan(grammar, command),
        GrammarFamily::Colors => interpret_colors(grammar, command),
    }
}
