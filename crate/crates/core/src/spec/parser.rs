use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;

use super::lexer::{tokenize, Tok, Token};
use super::resolve::{FsResolver, ImportResolver};
use super::{Argument, CmpOp, ParamType, Pos, SelectorInstance, SelectorKind, SelectorPipeline, SelectorRef, SpecError};

/// Parses specification text. Imports are resolved through `resolver`.
pub fn parse_spec(source: &str, resolver: &dyn ImportResolver) -> Result<SelectorPipeline, SpecError> {
    parse_spec_named(source, "<input>", None, resolver)
}

/// Parses a specification file, resolving imports relative to it and then
/// via the search-path environment variable.
pub fn parse_spec_file(path: impl AsRef<Path>) -> Result<SelectorPipeline, SpecError> {
    let path = path.as_ref();
    let label = path.display().to_string();
    let source = fs::read_to_string(path).map_err(|e| SpecError::Import {
        at: Pos {
            source: label.clone(),
            line: 0,
            col: 0,
        },
        module: label.clone(),
        reason: e.to_string(),
    })?;
    parse_spec_named(&source, &label, Some(path), &FsResolver::from_env())
}

/// Parses `source`, labelling diagnostics with `label`; `path` anchors relative imports.
pub fn parse_spec_named(
    source: &str,
    label: &str,
    path: Option<&Path>,
    resolver: &dyn ImportResolver,
) -> Result<SelectorPipeline, SpecError> {
    let mut state = State {
        resolver,
        instances: Vec::new(),
        defined: HashSet::new(),
        imported: HashSet::new(),
        stack: vec![path
            .and_then(|p| fs::canonicalize(p).ok())
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| label.to_string())],
    };
    state.parse_unit(source, label, path)?;
    if state.instances.is_empty() {
        return Err(SpecError::NoEntry);
    }
    Ok(SelectorPipeline {
        instances: state.instances,
    })
}

struct State<'r> {
    resolver: &'r dyn ImportResolver,
    instances: Vec<SelectorInstance>,
    defined: HashSet<String>,
    imported: HashSet<String>,
    stack: Vec<String>,
}

impl State<'_> {
    fn parse_unit(&mut self, source: &str, label: &str, path: Option<&Path>) -> Result<(), SpecError> {
        let tokens = tokenize(source, label)?;
        let mut cur = Cursor {
            tokens: &tokens,
            idx: 0,
            label,
        };
        while !cur.at_end() {
            match cur.peek() {
                Some(Tok::Import) => {
                    let at = cur.pos();
                    cur.bump();
                    cur.expect(Tok::LParen)?;
                    let module = match cur.next() {
                        Some((Tok::Str(s), _)) => s.clone(),
                        Some((t, at)) => return Err(syntax(at, format!("expected module name string, found {}", t.describe()))),
                        None => return Err(syntax(cur.pos(), "expected module name string, found end of input")),
                    };
                    cur.expect(Tok::RParen)?;
                    self.import(&module, at, path)?;
                }
                Some(Tok::Ident(_)) if cur.peek_at(1) == Some(&Tok::Equals) => {
                    let at = cur.pos();
                    let name = match cur.next() {
                        Some((Tok::Ident(n), _)) => n.clone(),
                        _ => unreachable!(),
                    };
                    cur.bump();
                    let mut inst = self.parse_expr(&mut cur)?;
                    if !self.defined.insert(name.clone()) {
                        return Err(SpecError::DuplicateName { at, name });
                    }
                    inst.name = Some(name);
                    self.instances.push(inst);
                }
                Some(_) => {
                    let inst = self.parse_expr(&mut cur)?;
                    self.instances.push(inst);
                }
                None => unreachable!(),
            }
        }
        Ok(())
    }

    fn import(&mut self, module: &str, at: Pos, importer: Option<&Path>) -> Result<(), SpecError> {
        let resolved = self.resolver.resolve(module, importer).map_err(|reason| SpecError::Import {
            at: at.clone(),
            module: module.to_string(),
            reason,
        })?;
        if self.stack.contains(&resolved.id) {
            let mut chain = self.stack.clone();
            chain.push(resolved.id);
            return Err(SpecError::ImportCycle { at, chain });
        }
        if !self.imported.insert(resolved.id.clone()) {
            log::debug!("spec: `{module}` already imported, skipping");
            return Ok(());
        }
        self.stack.push(resolved.id);
        let label = resolved
            .path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| module.to_string());
        let nested_path: Option<PathBuf> = resolved.path.clone();
        self.parse_unit(&resolved.source, &label, nested_path.as_deref())?;
        self.stack.pop();
        Ok(())
    }

    /// Parses one selector expression as an anonymous instance.
    fn parse_expr(&self, cur: &mut Cursor) -> Result<SelectorInstance, SpecError> {
        match cur.next() {
            Some((Tok::Universe, _)) => Ok(SelectorInstance {
                name: None,
                kind: SelectorKind::Identity,
                args: vec![Argument::Selector(SelectorRef::Universe)],
            }),
            Some((Tok::Ref(name), at)) => {
                let name = name.clone();
                self.check_defined(&name, at)?;
                Ok(SelectorInstance {
                    name: None,
                    kind: SelectorKind::Identity,
                    args: vec![Argument::Selector(SelectorRef::Named(name))],
                })
            }
            Some((Tok::Ident(kw), at)) => {
                let kind = SelectorKind::from_keyword(kw).ok_or_else(|| SpecError::UnknownKind {
                    at: at.clone(),
                    name: kw.clone(),
                })?;
                cur.expect(Tok::LParen)?;
                let mut raw = Vec::new();
                if cur.peek() == Some(&Tok::RParen) {
                    cur.bump();
                } else {
                    loop {
                        raw.push(self.parse_arg(cur)?);
                        match cur.next() {
                            Some((Tok::Comma, _)) => continue,
                            Some((Tok::RParen, _)) => break,
                            Some((t, at)) => return Err(syntax(at, format!("expected `,` or `)`, found {}", t.describe()))),
                            None => return Err(syntax(cur.pos(), "unbalanced parentheses at end of input")),
                        }
                    }
                }
                let args = check_args(kind, raw, &at)?;
                Ok(SelectorInstance { name: None, kind, args })
            }
            Some((t, at)) => Err(syntax(at, format!("expected a selector expression, found {}", t.describe()))),
            None => Err(syntax(cur.pos(), "expected a selector expression, found end of input")),
        }
    }

    fn parse_arg(&self, cur: &mut Cursor) -> Result<(Argument, Pos), SpecError> {
        let at = cur.pos();
        let arg = match cur.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                cur.bump();
                Argument::Str(s)
            }
            Some(Tok::Int(i)) => {
                let i = *i;
                cur.bump();
                Argument::Int(i)
            }
            Some(Tok::Universe) => {
                cur.bump();
                Argument::Selector(SelectorRef::Universe)
            }
            Some(Tok::Ref(name)) => {
                let name = name.clone();
                self.check_defined(&name, at.clone())?;
                cur.bump();
                Argument::Selector(SelectorRef::Named(name))
            }
            _ => {
                let inst = self.parse_expr(cur)?;
                Argument::Selector(SelectorRef::Inline(Box::new(inst)))
            }
        };
        Ok((arg, at))
    }

    fn check_defined(&self, name: &str, at: Pos) -> Result<(), SpecError> {
        if self.defined.contains(name) {
            Ok(())
        } else {
            Err(SpecError::UndefinedReference {
                at,
                name: name.to_string(),
            })
        }
    }
}

/// Checks arity and argument types; string literals in operator position become operators.
fn check_args(kind: SelectorKind, raw: Vec<(Argument, Pos)>, at: &Pos) -> Result<Vec<Argument>, SpecError> {
    let sig = kind.signature();
    if !sig.accepts(raw.len()) {
        return Err(SpecError::Arity {
            at: at.clone(),
            kind: kind.keyword(),
            expected: sig.describe(),
            found: raw.len(),
        });
    }
    let mut args = Vec::with_capacity(raw.len());
    for (i, (arg, arg_at)) in raw.into_iter().enumerate() {
        let expected = sig.param(i);
        let arg = match (expected, arg) {
            (ParamType::Op, Argument::Str(s)) => match CmpOp::parse(&s) {
                Some(op) => Argument::Op(op),
                None => return Err(SpecError::BadOperator { at: arg_at, op: s }),
            },
            (ParamType::Str, Argument::Str(s)) if kind == SelectorKind::ByName => {
                if let Err(e) = Regex::new(&format!("^(?:{s})$")) {
                    return Err(SpecError::BadPattern {
                        at: arg_at,
                        pattern: s,
                        msg: e.to_string(),
                    });
                }
                Argument::Str(s)
            }
            (expected, arg) if arg.param_type() == expected => arg,
            (expected, arg) => {
                return Err(SpecError::ArgType {
                    at: arg_at,
                    kind: kind.keyword(),
                    index: i + 1,
                    expected,
                    found: arg.param_type(),
                })
            }
        };
        args.push(arg);
    }
    Ok(args)
}

fn syntax(at: Pos, msg: impl Into<String>) -> SpecError {
    SpecError::Syntax { at, msg: msg.into() }
}

struct Cursor<'a> {
    tokens: &'a [Token],
    idx: usize,
    label: &'a str,
}

impl<'a> Cursor<'a> {
    fn at_end(&self) -> bool {
        self.idx >= self.tokens.len()
    }

    fn peek(&self) -> Option<&'a Tok> {
        self.tokens.get(self.idx).map(|t| &t.tok)
    }

    fn peek_at(&self, off: usize) -> Option<&'a Tok> {
        self.tokens.get(self.idx + off).map(|t| &t.tok)
    }

    fn pos(&self) -> Pos {
        let (line, col) = match self.tokens.get(self.idx) {
            Some(t) => (t.line, t.col),
            None => self.tokens.last().map(|t| (t.line, t.col + 1)).unwrap_or((1, 1)),
        };
        Pos {
            source: self.label.to_string(),
            line,
            col,
        }
    }

    fn bump(&mut self) {
        self.idx += 1;
    }

    fn next(&mut self) -> Option<(&'a Tok, Pos)> {
        let at = self.pos();
        let t = self.peek()?;
        self.idx += 1;
        Some((t, at))
    }

    fn expect(&mut self, want: Tok) -> Result<(), SpecError> {
        match self.next() {
            Some((t, _)) if *t == want => Ok(()),
            Some((t, at)) => Err(syntax(at, format!("expected {}, found {}", want.describe(), t.describe()))),
            None => Err(syntax(self.pos(), format!("expected {}, found end of input", want.describe()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{MapResolver, NoImports};
    use super::*;

    fn parse(s: &str) -> Result<SelectorPipeline, SpecError> {
        parse_spec(s, &NoImports)
    }

    #[test]
    fn single_join_of_universes() {
        let p = parse("x = join(%%, %%)").unwrap();
        assert_eq!(p.instances.len(), 1);
        let e = p.entry().unwrap();
        assert_eq!(e.name.as_deref(), Some("x"));
        assert_eq!(e.kind, SelectorKind::Join);
        assert_eq!(
            e.args,
            vec![
                Argument::Selector(SelectorRef::Universe),
                Argument::Selector(SelectorRef::Universe)
            ]
        );
    }

    #[test]
    fn forward_reference_is_undefined() {
        match parse("a = subtract(%%, %b)\nb = %%") {
            Err(SpecError::UndefinedReference { name, at }) => {
                assert_eq!(name, "b");
                assert_eq!((at.line, at.col), (1, 18));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_and_comment_only_specs_have_no_entry() {
        assert_eq!(parse(""), Err(SpecError::NoEntry));
        assert_eq!(parse("# nothing here\n"), Err(SpecError::NoEntry));
    }

    #[test]
    fn multi_line_expressions() {
        let p = parse("k = flops(\">=\", 10,\n   loopDepth(\">=\", 1,\n     %%))\n%k").unwrap();
        assert_eq!(p.instances.len(), 2);
        assert_eq!(p.instances[0].args[0], Argument::Op(CmpOp::Ge));
        assert_eq!(p.entry().unwrap().kind, SelectorKind::Identity);
    }

    #[test]
    fn missing_comma_between_operator_and_number_is_a_syntax_error() {
        let err = parse("k = loopDepth(\">=\" 1, %%)").unwrap_err();
        assert!(matches!(err, SpecError::Syntax { .. }), "{err}");
        assert!(err.to_string().contains("1:20"), "{err}");
    }

    #[test]
    fn kind_arity_and_type_errors() {
        assert!(matches!(parse("frob(%%)"), Err(SpecError::UnknownKind { .. })));
        assert!(matches!(parse("subtract(%%)"), Err(SpecError::Arity { found: 1, .. })));
        assert!(matches!(parse("join()"), Err(SpecError::Arity { found: 0, .. })));
        assert!(matches!(parse("flops(10, \">=\", %%)"), Err(SpecError::ArgType { index: 1, .. })));
        assert!(matches!(parse("flops(\"~\", 1, %%)"), Err(SpecError::BadOperator { .. })));
        assert!(matches!(parse("byName(\"(\", %%)"), Err(SpecError::BadPattern { .. })));
        assert!(matches!(parse("inSystemHeader(\"x\")"), Err(SpecError::ArgType { .. })));
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(matches!(parse("a = %%\na = %%"), Err(SpecError::DuplicateName { .. })));
    }

    #[test]
    fn unbalanced_parens_reported() {
        let err = parse("join(%%, %%").unwrap_err();
        assert!(err.to_string().contains("unbalanced"), "{err}");
    }

    #[test]
    fn imports_splice_in_place_and_are_idempotent() {
        let r = MapResolver::new([("m", "m1 = %%\nm2 = inSystemHeader(%m1)"), ("n", "!import(\"m\")\nn1 = %m2")]);
        let p = parse_spec("!import(\"m\")\n!import(\"n\")\n!import(\"m\")\nx = join(%m1, %n1)", &r).unwrap();
        let names: Vec<_> = p.instances.iter().map(|i| i.name.clone().unwrap()).collect();
        assert_eq!(names, ["m1", "m2", "n1", "x"]);
    }

    #[test]
    fn import_cycles_and_missing_modules() {
        let r = MapResolver::new([("a", "!import(\"b\")\na = %%"), ("b", "!import(\"a\")\nb = %%")]);
        let err = parse_spec("!import(\"a\")", &r).unwrap_err();
        match err {
            SpecError::ImportCycle { chain, .. } => assert_eq!(chain, ["<input>", "a", "b", "a"]),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("!import(\"zzz\")"), Err(SpecError::Import { .. })));
    }

    #[test]
    fn errors_inside_imports_name_the_module() {
        let r = MapResolver::new([("bad", "\n  x = nope(%%)")]);
        let err = parse_spec("!import(\"bad\")", &r).unwrap_err();
        assert_eq!(err.to_string(), "bad:2:7: unknown selector kind `nope`");
    }

    #[test]
    fn parsing_is_deterministic() {
        let s = "a = byName(\"MPI_.*\", %%)\nb = onCallPathTo(%a)\ncoarse(%b, %a)";
        assert_eq!(parse(s).unwrap(), parse(s).unwrap());
    }
}
