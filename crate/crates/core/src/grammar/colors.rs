//! The Colors command language.
//!
//! Four primitives map to abstract color tokens; three operators compose
//! them with precedence repetition > wrapping > concatenation:
//!
//! ```text
//! E -> W kiki E | W          [[w kiki e]]      = [[e]] [[w]]
//! W -> R blicket R | R       [[a blicket b]]   = [[a]] [[b]] [[a]]
//! R -> P fep | P             [[p fep]]         = [[p]] [[p]] [[p]]
//! P -> dax | lug | wif | zup (plus injected primitives)
//! ```
//!
//! The canonical 14-example train / 8-example test split ships as fixture
//! data and is checked token-for-token against this interpreter.

use super::{ActionSequence, Command, Example, ExampleKind, Grammar, GrammarError};

#[derive(Debug, Clone, PartialEq, Eq)]
enum ColorAst {
    Prim(String),
    Rep(Box<ColorAst>),
    Wrap(Box<ColorAst>, Box<ColorAst>),
    Concat(Box<ColorAst>, Box<ColorAst>),
}

struct Parser<'a> {
    grammar: &'a Grammar,
    toks: &'a [String],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(|s| s.as_str())
    }

    fn bump(&mut self) -> Option<&'a str> {
        let t = self.toks.get(self.pos).map(|s| s.as_str());
        self.pos += 1;
        t
    }

    fn parse_e(&mut self) -> Option<ColorAst> {
        let w = self.parse_w()?;
        if self.peek() == Some("kiki") {
            self.bump();
            let e = self.parse_e()?;
            Some(ColorAst::Concat(Box::new(w), Box::new(e)))
        } else {
            Some(w)
        }
    }

    fn parse_w(&mut self) -> Option<ColorAst> {
        let r = self.parse_r()?;
        if self.peek() == Some("blicket") {
            self.bump();
            let r2 = self.parse_r()?;
            Some(ColorAst::Wrap(Box::new(r), Box::new(r2)))
        } else {
            Some(r)
        }
    }

    fn parse_r(&mut self) -> Option<ColorAst> {
        let p = self.bump()?;
        if !self.grammar.has_primitive(p) {
            return None;
        }
        let prim = ColorAst::Prim(p.to_string());
        if self.peek() == Some("fep") {
            self.bump();
            Some(ColorAst::Rep(Box::new(prim)))
        } else {
            Some(prim)
        }
    }
}

pub fn parse_colors(grammar: &Grammar, command: &Command) -> Result<(), GrammarError> {
    parse(grammar, command).map(|_| ())
}

fn parse(grammar: &Grammar, command: &Command) -> Result<ColorAst, GrammarError> {
    let mut p = Parser {
        grammar,
        toks: command.tokens(),
        pos: 0,
    };
    match p.parse_e() {
        Some(ast) if p.pos == command.tokens().len() => Ok(ast),
        _ => Err(GrammarError::UngrammaticalCommand(command.joined())),
    }
}

pub fn interpret_colors(
    grammar: &Grammar,
    command: &Command,
) -> Result<ActionSequence, GrammarError> {
    let ast = parse(grammar, command)?;
    let mut out = Vec::new();
    eval(grammar, &ast, &mut out);
    Ok(ActionSequence(out))
}

fn eval(grammar: &Grammar, ast: &ColorAst, out: &mut Vec<String>) {
    match ast {
        ColorAst::Prim(p) => out.push(
            grammar
                .primitive(p)
                .expect("parsed primitives exist")
                .action
                .clone(),
        ),
        ColorAst::Rep(inner) => {
            let mut unit = Vec::new();
            eval(grammar, inner, &mut unit);
            for _ in 0..3 {
                out.extend(unit.iter().cloned());
            }
        }
        ColorAst::Wrap(a, b) => {
            let mut ua = Vec::new();
            let mut ub = Vec::new();
            eval(grammar, a, &mut ua);
            eval(grammar, b, &mut ub);
            out.extend(ua.iter().cloned());
            out.extend(ub);
            out.extend(ua);
        }
        ColorAst::Concat(a, b) => {
            eval(grammar, b, out);
            eval(grammar, a, out);
        }
    }
}

fn parse_fixture(text: &str) -> Vec<Example> {
    let grammar = Grammar::colors();
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rest = line.strip_prefix("IN: ").expect("fixture line format");
        let (input, output) = rest.split_once(" OUT: ").expect("fixture line format");
        let input = Command::from_str(input);
        let output = ActionSequence::from_str(output);
        let kind = if input.tokens().len() == 1 {
            ExampleKind::PrimitiveDefinition
        } else {
            ExampleKind::Compositional
        };
        assert_eq!(
            interpret_colors(&grammar, &input).unwrap(),
            output,
            "fixture item disagrees with interpreter: {line}"
        );
        out.push(Example::new(input, output, kind));
    }
    out
}

/// The canonical Colors items: 14 train examples (four primitive definitions
/// plus ten compositions of the three example primitives) and 8 test examples,
/// every one containing the isolated primitive `zup`. The two
/// length-generalization items of the source data are excluded.
pub fn colors_canonical_split() -> (Vec<Example>, Vec<Example>) {
    let train = parse_fixture(include_str!("../../assets/colors_train.txt"));
    let test = parse_fixture(include_str!("../../assets/colors_test.txt"));
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_semantics() {
        let g = Grammar::colors();
        for (cmd, acts) in [
            ("dax", "RED"),
            ("dax fep", "RED RED RED"),
            ("wif blicket dax", "GREEN RED GREEN"),
            ("dax kiki lug", "BLUE RED"),
            ("lug fep kiki wif", "GREEN BLUE BLUE BLUE"),
            ("lug kiki wif fep", "GREEN GREEN GREEN BLUE"),
            ("wif kiki dax blicket lug", "RED BLUE RED GREEN"),
            ("dax blicket lug kiki wif", "GREEN RED BLUE RED"),
            ("zup blicket wif kiki dax fep", "RED RED RED YELLOW GREEN YELLOW"),
        ] {
            let got = interpret_colors(&g, &Command::from_str(cmd)).unwrap();
            assert_eq!(got.joined(), acts, "command: {cmd}");
        }
    }

    #[test]
    fn rejects_ungrammatical() {
        let g = Grammar::colors();
        for bad in ["", "fep", "dax dax", "dax blicket", "kiki dax", "dax fep fep"] {
            assert!(
                interpret_colors(&g, &Command::from_str(bad)).is_err(),
                "should reject {bad:?}"
            );
        }
    }

    #[test]
    fn canonical_split_shape() {
        let (train, test) = colors_canonical_split();
        assert_eq!(train.len(), 14);
        assert_eq!(test.len(), 8);
        let zup_train: Vec<_> = train
            .iter()
            .filter(|e| e.input.contains_token("zup"))
            .collect();
        assert_eq!(zup_train.len(), 1);
        assert_eq!(zup_train[0].kind, ExampleKind::PrimitiveDefinition);
        assert!(test.iter().all(|e| e.input.contains_token("zup")));
        assert!(test.iter().all(|e| e.kind == ExampleKind::Compositional));
    }
}
