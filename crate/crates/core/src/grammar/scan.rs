//! The SCAN command language.
//!
//! Productions (C = command, S = clause, V = verb phrase, Dir = direction,
//! U = primitive word):
//!
//! ```text
//! C   -> S and S | S after S | S
//! S   -> V twice | V thrice | V
//! V   -> U opposite Dir | turn opposite Dir | U around Dir | turn around Dir
//!        | U Dir | turn Dir | U
//! Dir -> left | right
//! ```
//!
//! With `k` primitives there are `7k + 6` V phrases, `S = 21k + 18` clauses
//! and `S + 2*S^2` commands. Interpretation is compositional:
//! `[[x twice]] = [[x]] [[x]]`, `[[x1 and x2]] = [[x1]] [[x2]]`,
//! `[[x1 after x2]] = [[x2]] [[x1]]`, `[[u left]] = LTURN [[u]]`,
//! `[[u opposite left]] = LTURN LTURN [[u]]`, and `[[u around left]]` is four
//! repetitions of `LTURN [[u]]` (right analogously with RTURN).

use super::{ActionSequence, Command, Grammar, GrammarError};

const LTURN: &str = "LTURN";
const RTURN: &str = "RTURN";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    Left,
    Right,
}

impl Dir {
    fn word(self) -> &'static str {
        match self {
            Dir::Left => "left",
            Dir::Right => "right",
        }
    }

    fn turn_action(self) -> &'static str {
        match self {
            Dir::Left => LTURN,
            Dir::Right => RTURN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modifier {
    Plain,
    Opposite,
    Around,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VPhrase {
    /// `turn Dir`, `turn opposite Dir`, `turn around Dir`
    Turn { modifier: Modifier, dir: Dir },
    /// bare primitive `u`
    Prim { surface: String },
    /// `u Dir`, `u opposite Dir`, `u around Dir`
    PrimDir {
        surface: String,
        modifier: Modifier,
        dir: Dir,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repeat {
    Once,
    Twice,
    Thrice,
}

impl Repeat {
    fn count(self) -> usize {
        match self {
            Repeat::Once => 1,
            Repeat::Twice => 2,
            Repeat::Thrice => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SPhrase {
    pub v: VPhrase,
    pub repeat: Repeat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommandAst {
    Single(SPhrase),
    And(SPhrase, SPhrase),
    After(SPhrase, SPhrase),
}

/// Parses a command under the SCAN productions; the grammar supplies the
/// primitive inventory. Every grammatical command has exactly one parse.
pub fn parse_scan(grammar: &Grammar, command: &Command) -> Result<CommandAst, GrammarError> {
    let toks = command.tokens();
    let ungrammatical = || GrammarError::UngrammaticalCommand(command.joined());
    let conj_positions: Vec<usize> = toks
        .iter()
        .enumerate()
        .filter(|(_, t)| *t == "and" || *t == "after")
        .map(|(i, _)| i)
        .collect();
    match conj_positions.len() {
        0 => Ok(CommandAst::Single(
            parse_s(grammar, toks).ok_or_else(ungrammatical)?,
        )),
        1 => {
            let i = conj_positions[0];
            let left = parse_s(grammar, &toks[..i]).ok_or_else(ungrammatical)?;
            let right = parse_s(grammar, &toks[i + 1..]).ok_or_else(ungrammatical)?;
            if toks[i] == "and" {
                Ok(CommandAst::And(left, right))
            } else {
                Ok(CommandAst::After(left, right))
            }
        }
        _ => Err(ungrammatical()),
    }
}

fn parse_s(grammar: &Grammar, toks: &[String]) -> Option<SPhrase> {
    if toks.is_empty() {
        return None;
    }
    let (v_toks, repeat) = match toks.last().map(|s| s.as_str()) {
        Some("twice") => (&toks[..toks.len() - 1], Repeat::Twice),
        Some("thrice") => (&toks[..toks.len() - 1], Repeat::Thrice),
        _ => (toks, Repeat::Once),
    };
    Some(SPhrase {
        v: parse_v(grammar, v_toks)?,
        repeat,
    })
}

fn parse_dir(tok: &str) -> Option<Dir> {
    match tok {
        "left" => Some(Dir::Left),
        "right" => Some(Dir::Right),
        _ => None,
    }
}

fn parse_v(grammar: &Grammar, toks: &[String]) -> Option<VPhrase> {
    let is_prim = |t: &str| grammar.has_primitive(t);
    match toks {
        [u] if is_prim(u) => Some(VPhrase::Prim { surface: u.clone() }),
        [head, dir] => {
            let dir = parse_dir(dir)?;
            if head == "turn" {
                Some(VPhrase::Turn {
                    modifier: Modifier::Plain,
                    dir,
                })
            } else if is_prim(head) {
                Some(VPhrase::PrimDir {
                    surface: head.clone(),
                    modifier: Modifier::Plain,
                    dir,
                })
            } else {
                None
            }
        }
        [head, modifier, dir] => {
            let dir = parse_dir(dir)?;
            let modifier = match modifier.as_str() {
                "opposite" => Modifier::Opposite,
                "around" => Modifier::Around,
                _ => return None,
            };
            if head == "turn" {
                Some(VPhrase::Turn { modifier, dir })
            } else if is_prim(head) {
                Some(VPhrase::PrimDir {
                    surface: head.clone(),
                    modifier,
                    dir,
                })
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Compiles a command to its unique action sequence.
pub fn interpret_scan(
    grammar: &Grammar,
    command: &Command,
) -> Result<ActionSequence, GrammarError> {
    let ast = parse_scan(grammar, command)?;
    Ok(eval_ast(grammar, &ast))
}

pub fn eval_ast(grammar: &Grammar, ast: &CommandAst) -> ActionSequence {
    let mut out = Vec::new();
    match ast {
        CommandAst::Single(s) => eval_s(grammar, s, &mut out),
        CommandAst::And(a, b) => {
            eval_s(grammar, a, &mut out);
            eval_s(grammar, b, &mut out);
        }
        CommandAst::After(a, b) => {
            eval_s(grammar, b, &mut out);
            eval_s(grammar, a, &mut out);
        }
    }
    ActionSequence(out)
}

fn eval_s(grammar: &Grammar, s: &SPhrase, out: &mut Vec<String>) {
    let mut unit = Vec::new();
    eval_v(grammar, &s.v, &mut unit);
    for _ in 0..s.repeat.count() {
        out.extend(unit.iter().cloned());
    }
}

fn eval_v(grammar: &Grammar, v: &VPhrase, out: &mut Vec<String>) {
    match v {
        VPhrase::Turn { modifier, dir } => {
            let t = dir.turn_action();
            let n = match modifier {
                Modifier::Plain => 1,
                Modifier::Opposite => 2,
                Modifier::Around => 4,
            };
            for _ in 0..n {
                out.push(t.to_string());
            }
        }
        VPhrase::Prim { surface } => {
            out.push(action_of(grammar, surface));
        }
        VPhrase::PrimDir {
            surface,
            modifier,
            dir,
        } => {
            let t = dir.turn_action();
            let a = action_of(grammar, surface);
            match modifier {
                Modifier::Plain => {
                    out.push(t.to_string());
                    out.push(a);
                }
                Modifier::Opposite => {
                    out.push(t.to_string());
                    out.push(t.to_string());
                    out.push(a);
                }
                Modifier::Around => {
                    for _ in 0..4 {
                        out.push(t.to_string());
                        out.push(a.clone());
                    }
                }
            }
        }
    }
}

fn action_of(grammar: &Grammar, surface: &str) -> String {
    grammar
        .primitive(surface)
        .expect("parsed primitives exist in the grammar")
        .action
        .clone()
}

/// All S phrases of a grammar in a fixed block layout: 21 phrases per
/// primitive (7 V forms x {once, twice, thrice}) followed by 18 turn-only
/// phrases. The layout lets per-primitive command inventories be indexed
/// without materializing the quadratic command space.
pub struct PhraseInventory {
    phrases: Vec<Vec<String>>,
    k: usize,
}

/// Phrases per primitive block: 7 V forms x 3 repeats.
pub const PHRASES_PER_PRIMITIVE: usize = 21;
/// Turn-only phrases: 6 V forms x 3 repeats.
pub const TURN_PHRASES: usize = 18;

impl PhraseInventory {
    pub fn build(grammar: &Grammar) -> Self {
        let mut phrases = Vec::new();
        let dirs = [Dir::Left, Dir::Right];
        let mods = [Modifier::Plain, Modifier::Opposite, Modifier::Around];
        let repeats = ["", "twice", "thrice"];

        let push_forms = |phrases: &mut Vec<Vec<String>>, base: Vec<Vec<String>>| {
            for form in base {
                for rep in repeats {
                    let mut p = form.clone();
                    if !rep.is_empty() {
                        p.push(rep.to_string());
                    }
                    phrases.push(p);
                }
            }
        };

        for prim in grammar.primitives() {
            let u = prim.surface.clone();
            let mut forms = vec![vec![u.clone()]];
            for m in mods {
                for d in dirs {
                    let mut f = vec![u.clone()];
                    if m == Modifier::Opposite {
                        f.push("opposite".into());
                    } else if m == Modifier::Around {
                        f.push("around".into());
                    }
                    f.push(d.word().into());
                    forms.push(f);
                }
            }
            debug_assert_eq!(forms.len(), 7);
            push_forms(&mut phrases, forms);
        }

        let mut turn_forms = Vec::new();
        for m in mods {
            for d in dirs {
                let mut f = vec!["turn".to_string()];
                if m == Modifier::Opposite {
                    f.push("opposite".into());
                } else if m == Modifier::Around {
                    f.push("around".into());
                }
                f.push(d.word().into());
                turn_forms.push(f);
            }
        }
        debug_assert_eq!(turn_forms.len(), 6);
        push_forms(&mut phrases, turn_forms);

        let k = grammar.primitive_count();
        debug_assert_eq!(phrases.len(), PHRASES_PER_PRIMITIVE * k + TURN_PHRASES);
        Self { phrases, k }
    }

    /// Number of S phrases (`21k + 18`).
    pub fn phrase_count(&self) -> usize {
        self.phrases.len()
    }

    pub fn phrase(&self, idx: usize) -> &[String] {
        &self.phrases[idx]
    }

    /// Index range of phrases containing the `i`-th primitive.
    fn block(&self, prim_index: usize) -> std::ops::Range<usize> {
        let start = PHRASES_PER_PRIMITIVE * prim_index;
        start..start + PHRASES_PER_PRIMITIVE
    }

    /// Every command of the language, in construction order.
    pub fn all_commands(&self) -> Vec<Command> {
        let s = self.phrase_count();
        let mut out = Vec::with_capacity(s + 2 * s * s);
        for p in &self.phrases {
            out.push(Command(p.clone()));
        }
        for conj in ["and", "after"] {
            for a in &self.phrases {
                for b in &self.phrases {
                    let mut toks = Vec::with_capacity(a.len() + 1 + b.len());
                    toks.extend(a.iter().cloned());
                    toks.push(conj.to_string());
                    toks.extend(b.iter().cloned());
                    out.push(Command(toks));
                }
            }
        }
        out
    }

    /// Commands containing the primitive, excluding its bare definition,
    /// in construction order. Prefer [`PrimitiveSampler`] at large `k`.
    pub fn commands_containing(&self, surface: &str) -> Vec<Command> {
        let sampler = self
            .sampler_for_surface(surface)
            .expect("caller validated primitive");
        (0..sampler.len()).map(|i| sampler.decode(i)).collect()
    }

    pub fn sampler_for_surface(&self, surface: &str) -> Option<PrimitiveSampler<'_>> {
        let idx = self
            .phrases
            .iter()
            .take(self.k * PHRASES_PER_PRIMITIVE)
            .step_by(PHRASES_PER_PRIMITIVE)
            .position(|p| p[0] == *surface)?;
        Some(PrimitiveSampler {
            inv: self,
            block: self.block(idx),
        })
    }
}

/// Virtual index over all commands containing one primitive. The space is
/// partitioned as: single phrases from the primitive's block (minus the bare
/// definition), then `sp <conj> s_any` and `s_other <conj> sp` pairs for each
/// conjunction. Uniform sampling over indices is uniform over commands.
pub struct PrimitiveSampler<'a> {
    inv: &'a PhraseInventory,
    block: std::ops::Range<usize>,
}

impl<'a> PrimitiveSampler<'a> {
    /// Total commands containing the primitive, excluding its definition.
    pub fn len(&self) -> u64 {
        let s = self.inv.phrase_count() as u64;
        let p = PHRASES_PER_PRIMITIVE as u64;
        let n = s - p;
        (p - 1) + 2 * (p * s + n * p)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Maps a virtual index to its command. Index layout:
    /// `[singles | sp-and-any | other-and-sp | sp-after-any | other-after-sp]`.
    pub fn decode(&self, idx: u64) -> Command {
        let s = self.inv.phrase_count() as u64;
        let p = PHRASES_PER_PRIMITIVE as u64;
        let n = s - p;
        let b0 = self.block.start as u64;

        let singles = p - 1;
        if idx < singles {
            // Skip index 0 of the block: the bare one-token definition.
            return Command(self.inv.phrase((b0 + 1 + idx) as usize).to_vec());
        }
        let mut rest = idx - singles;
        for conj in ["and", "after"] {
            let lead = p * s;
            if rest < lead {
                let a = b0 + rest / s;
                let b = rest % s;
                return self.pair(a as usize, conj, b as usize);
            }
            rest -= lead;
            let trail = n * p;
            if rest < trail {
                let other = rest / p;
                let b = b0 + rest % p;
                // Map the "other" ordinal over phrases outside the block.
                let a = if other < b0 { other } else { other + p };
                return self.pair(a as usize, conj, b as usize);
            }
            rest -= trail;
        }
        panic!("primitive sampler index {idx} out of range");
    }

    fn pair(&self, a: usize, conj: &str, b: usize) -> Command {
        let pa = self.inv.phrase(a);
        let pb = self.inv.phrase(b);
        let mut toks = Vec::with_capacity(pa.len() + 1 + pb.len());
        toks.extend(pa.iter().cloned());
        toks.push(conj.to_string());
        toks.extend(pb.iter().cloned());
        Command(toks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn table_goldens() {
        let g = Grammar::scan();
        for (cmd, acts) in [
            ("jump twice after look", "LOOK JUMP JUMP"),
            ("look left twice", "LTURN LOOK LTURN LOOK"),
            ("jump right twice", "RTURN JUMP RTURN JUMP"),
            ("run after run left", "LTURN RUN RUN"),
            ("walk", "WALK"),
        ] {
            let got = interpret_scan(&g, &Command::from_str(cmd)).unwrap();
            assert_eq!(got.joined(), acts, "command: {cmd}");
        }
    }

    #[test]
    fn around_and_opposite() {
        let g = Grammar::scan();
        let cases = [
            ("turn left", "LTURN"),
            ("turn opposite right", "RTURN RTURN"),
            ("turn around left", "LTURN LTURN LTURN LTURN"),
            ("walk opposite left", "LTURN LTURN WALK"),
            (
                "walk around right",
                "RTURN WALK RTURN WALK RTURN WALK RTURN WALK",
            ),
            ("turn left and walk", "LTURN WALK"),
        ];
        for (cmd, acts) in cases {
            let got = interpret_scan(&g, &Command::from_str(cmd)).unwrap();
            assert_eq!(got.joined(), acts, "command: {cmd}");
        }
    }

    #[test]
    fn rejects_ungrammatical() {
        let g = Grammar::scan();
        for bad in [
            "",
            "turn",
            "walk walk",
            "twice walk",
            "walk and",
            "and walk",
            "walk and run and look",
            "walk opposite",
            "jump around",
            "swim",
            "walk left left",
            "walk twice twice",
        ] {
            assert!(
                interpret_scan(&g, &Command::from_str(bad)).is_err(),
                "should reject: {bad:?}"
            );
        }
    }

    #[test]
    fn sampler_matches_materialized_inventory() {
        let g = Grammar::scan();
        let inv = PhraseInventory::build(&g);
        let sampler = inv.sampler_for_surface("jump").unwrap();
        let via_decode: BTreeSet<Command> =
            (0..sampler.len()).map(|i| sampler.decode(i)).collect();
        assert_eq!(via_decode.len() as u64, sampler.len(), "decode is injective");

        let brute: BTreeSet<Command> = inv
            .all_commands()
            .into_iter()
            .filter(|c| c.contains_token("jump") && c.tokens().len() > 1)
            .collect();
        assert_eq!(via_decode, brute);
    }

    #[test]
    fn phrase_count_law() {
        for k in 1..=6 {
            let mut prims = Vec::new();
            for i in 0..k {
                let name: String = "v".repeat(i + 1);
                prims.push(super::super::PrimitiveEntry::new(
                    &name,
                    &name.to_ascii_uppercase(),
                    super::super::PrimitiveRole::Example,
                ));
            }
            let g = Grammar::new(super::super::GrammarFamily::Scan, prims).unwrap();
            let inv = PhraseInventory::build(&g);
            assert_eq!(inv.phrase_count(), 21 * k + 18);
        }
    }
}
