//! Concrete syntax for `.spi` specification files and the term printer.
//!
//! ```text
//! file   ::= defn* "main" ":=" proc
//! defn   ::= IDENT "(" [IDENT ("," IDENT)*] ")" ":=" proc
//! proc   ::= sum ("|" sum)*
//! sum    ::= unary ("+" unary)*
//! unary  ::= "0" | prefix "." unary | "new" IDENT "in" proc
//!          | IDENT "(" [IDENT ("," IDENT)*] ")" | "(" proc ")"
//! prefix ::= IDENT "<" IDENT ">" | IDENT "(" IDENT ")" | "tau" | "(" RATE ")"
//! ```
//!
//! `#` starts a line comment. Extended terms (`new q->5 in P`, `(q).P`) are
//! accepted only by [`parse_extended_term`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::syntax::{DefEnv, Definition, GuardednessError, Name, Prefix, Rate, RateError, Term};

/// 1-based line and column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{pos}: syntax error: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("{pos}: rate `{text}` must be strictly positive")]
    NonPositiveRate { pos: Pos, text: String },
    #[error("{pos}: undefined constant `{name}`")]
    Undefined { pos: Pos, name: String },
    #[error("{pos}: constant `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        pos: Pos,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("{pos}: constant `{name}` is defined twice")]
    Duplicate { pos: Pos, name: String },
    #[error("{pos}: {source}")]
    Guardedness {
        pos: Pos,
        #[source]
        source: GuardednessError,
    },
}

impl ParseError {
    pub fn pos(&self) -> Pos {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::NonPositiveRate { pos, .. }
            | ParseError::Undefined { pos, .. }
            | ParseError::Arity { pos, .. }
            | ParseError::Duplicate { pos, .. }
            | ParseError::Guardedness { pos, .. } => *pos,
        }
    }
}

/// Where each definition and the main term start in the source.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SourceMap {
    pub defs: BTreeMap<String, Pos>,
    pub main: Pos,
}

/// A parsed specification: constant definitions and the main process.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecFile {
    pub defs: DefEnv,
    pub main: Term,
    pub source: SourceMap,
}

impl SpecFile {
    /// A spec without any constants.
    pub fn from_term(main: Term) -> Self {
        SpecFile {
            defs: DefEnv::new(),
            main,
            source: SourceMap::default(),
        }
    }

    /// Renders the spec back into `.spi` syntax.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        for d in self.defs.iter() {
            let params: Vec<&str> = d.params.iter().map(|p| p.id()).collect();
            out.push_str(&format!(
                "{}({}) := {}\n",
                d.name,
                params.join(", "),
                print(&d.body)
            ));
        }
        out.push_str(&format!("main := {}\n", print(&self.main)));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    LParen,
    RParen,
    Lt,
    Gt,
    Dot,
    Plus,
    Bar,
    Comma,
    Semi,
    Assign,
    Arrow,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Number(s) => write!(f, "number `{s}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Lt => f.write_str("`<`"),
            Tok::Gt => f.write_str("`>`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Bar => f.write_str("`|`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Assign => f.write_str("`:=`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '\'')
                {
                    i += 1;
                }
                col += i - start;
                out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                col += i - start;
                out.push((Tok::Number(chars[start..i].iter().collect()), pos));
            }
            ':' if chars.get(i + 1) == Some(&'=') => {
                advance(2, &mut i, &mut col);
                out.push((Tok::Assign, pos));
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                advance(2, &mut i, &mut col);
                out.push((Tok::Arrow, pos));
            }
            _ => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '<' => Tok::Lt,
                    '>' => Tok::Gt,
                    '.' => Tok::Dot,
                    '+' => Tok::Plus,
                    '|' => Tok::Bar,
                    ',' => Tok::Comma,
                    ';' => Tok::Semi,
                    other => {
                        return Err(ParseError::Syntax {
                            pos,
                            msg: format!("unexpected character `{}`", other.escape_debug()),
                        })
                    }
                };
                advance(1, &mut i, &mut col);
                out.push((tok, pos));
            }
        }
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

const KEYWORDS: [&str; 4] = ["new", "in", "tau", "main"];

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    extended: bool,
    /// Constant uses, for arity and definedness checks with positions.
    uses: Vec<(String, usize, Pos)>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.at + k).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError::Syntax {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn expect(&mut self, want: Tok) -> PResult<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {want}, found {}", self.peek()))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            other => self.error(format!("expected a name, found {other}")),
        }
    }

    fn rate(&mut self) -> PResult<Rate> {
        let pos = self.pos();
        let Tok::Number(text) = self.bump() else {
            return Err(ParseError::Syntax {
                pos,
                msg: "expected a rate".into(),
            });
        };
        Rate::parse(&text).map_err(|e| match e {
            RateError::NonPositive(text) => ParseError::NonPositiveRate { pos, text },
            RateError::Malformed(text) => ParseError::Syntax {
                pos,
                msg: format!("malformed rate `{text}`"),
            },
        })
    }

    fn file(&mut self) -> PResult<(Vec<(Definition, Pos)>, Term, Pos)> {
        let mut defs = Vec::new();
        loop {
            match self.peek() {
                Tok::Ident(s) if s == "main" => break,
                Tok::Ident(_) => defs.push(self.definition()?),
                Tok::Eof => return self.error("missing `main := ...`"),
                other => return self.error(format!("expected a definition, found {other}")),
            }
            while matches!(self.peek(), Tok::Semi | Tok::Comma) {
                self.bump();
            }
        }
        self.bump();
        self.expect(Tok::Assign)?;
        let main_pos = self.pos();
        let main = self.proc()?;
        while matches!(self.peek(), Tok::Semi) {
            self.bump();
        }
        if *self.peek() != Tok::Eof {
            return self.error(format!("unexpected {} after main process", self.peek()));
        }
        Ok((defs, main, main_pos))
    }

    fn definition(&mut self) -> PResult<(Definition, Pos)> {
        let pos = self.pos();
        let name = self.ident()?;
        self.expect(Tok::LParen)?;
        let mut params: Vec<Name> = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let ppos = self.pos();
                let p = Name::channel(&self.ident()?);
                if params.contains(&p) {
                    return Err(ParseError::Syntax {
                        pos: ppos,
                        msg: format!("parameter `{p}` listed twice"),
                    });
                }
                params.push(p);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::Assign)?;
        let body = self.proc()?;
        Ok((
            Definition {
                name: Arc::from(name.as_str()),
                params,
                body,
            },
            pos,
        ))
    }

    fn proc(&mut self) -> PResult<Term> {
        let mut acc = self.sum()?;
        while *self.peek() == Tok::Bar {
            self.bump();
            let rhs = self.sum()?;
            acc = Term::par(acc, rhs);
        }
        Ok(acc)
    }

    fn sum(&mut self) -> PResult<Term> {
        let pos = self.pos();
        let first = self.unary()?;
        if *self.peek() != Tok::Plus {
            return Ok(first);
        }
        if !first.is_guarded_sum() {
            return Err(ParseError::Syntax {
                pos,
                msg: "operand of `+` must be `0` or a prefixed process".into(),
            });
        }
        let mut acc = first;
        while *self.peek() == Tok::Plus {
            self.bump();
            let pos = self.pos();
            let rhs = self.unary()?;
            if !rhs.is_guarded_sum() {
                return Err(ParseError::Syntax {
                    pos,
                    msg: "operand of `+` must be `0` or a prefixed process".into(),
                });
            }
            acc = Term::sum(acc, rhs);
        }
        Ok(acc)
    }

    fn continuation(&mut self, prefix: Prefix) -> PResult<Term> {
        self.expect(Tok::Dot)?;
        let cont = self.unary()?;
        Ok(Term::prefixed(prefix, cont))
    }

    fn unary(&mut self) -> PResult<Term> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Number(n) if n == "0" => {
                self.bump();
                Ok(Term::Nil)
            }
            Tok::Ident(kw) if kw == "new" => {
                self.bump();
                let name = self.ident()?;
                if *self.peek() == Tok::Arrow {
                    if !self.extended {
                        return self.error("stochastic binders are not allowed in specifications");
                    }
                    self.bump();
                    let rate = self.rate()?;
                    self.expect(Tok::Ident("in".into()))?;
                    let body = self.proc()?;
                    return Ok(Term::restrict(Name::stochastic(&name), Some(rate), body));
                }
                self.expect(Tok::Ident("in".into()))?;
                let body = self.proc()?;
                Ok(Term::new_channel(Name::channel(&name), body))
            }
            Tok::Ident(kw) if kw == "tau" => {
                self.bump();
                self.continuation(Prefix::Tau)
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                match self.peek() {
                    Tok::Lt => {
                        self.bump();
                        let object = self.ident()?;
                        self.expect(Tok::Gt)?;
                        self.continuation(Prefix::Output {
                            subject: Name::channel(&name),
                            object: Name::channel(&object),
                        })
                    }
                    Tok::LParen => {
                        self.bump();
                        let mut args = Vec::new();
                        if *self.peek() != Tok::RParen {
                            loop {
                                args.push(Name::channel(&self.ident()?));
                                if *self.peek() == Tok::Comma {
                                    self.bump();
                                } else {
                                    break;
                                }
                            }
                        }
                        self.expect(Tok::RParen)?;
                        if *self.peek() == Tok::Dot {
                            if args.len() != 1 {
                                return Err(ParseError::Syntax {
                                    pos,
                                    msg: "input prefix binds exactly one name".into(),
                                });
                            }
                            let bound = args.pop().expect("one argument");
                            self.continuation(Prefix::Input {
                                subject: Name::channel(&name),
                                bound,
                            })
                        } else {
                            self.uses.push((name.clone(), args.len(), pos));
                            Ok(Term::constant(&name, args))
                        }
                    }
                    other => {
                        self.error(format!("expected `<` or `(` after `{name}`, found {other}"))
                    }
                }
            }
            Tok::LParen => {
                match (self.peek_at(1).clone(), self.peek_at(2), self.peek_at(3)) {
                    (Tok::Number(_), Tok::RParen, Tok::Dot) => {
                        self.bump();
                        let rate = self.rate()?;
                        self.expect(Tok::RParen)?;
                        return self.continuation(Prefix::Delay(rate));
                    }
                    (Tok::Ident(q), Tok::RParen, Tok::Dot) if !KEYWORDS.contains(&q.as_str()) => {
                        if !self.extended {
                            return self
                                .error("stochastic names are not allowed in specifications");
                        }
                        self.bump();
                        self.bump();
                        self.bump();
                        return self.continuation(Prefix::SymbolicDelay(Name::stochastic(&q)));
                    }
                    _ => {}
                }
                self.bump();
                let inner = self.proc()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            other => self.error(format!("expected a process, found {other}")),
        }
    }
}

fn run_parser(src: &str, extended: bool) -> PResult<Parser> {
    Ok(Parser {
        toks: lex(src)?,
        at: 0,
        extended,
        uses: Vec::new(),
    })
}

/// Parses a specification file in the user-facing syntax and checks it:
/// definedness, arities and weak guardedness.
pub fn parse(src: &str) -> Result<SpecFile, ParseError> {
    let mut p = run_parser(src, false)?;
    let (defs, main, main_pos) = p.file()?;
    let mut env = DefEnv::new();
    let mut source = SourceMap {
        defs: BTreeMap::new(),
        main: main_pos,
    };
    for (d, pos) in defs {
        let name = d.name.to_string();
        if env.insert(d).is_err() {
            return Err(ParseError::Duplicate { pos, name });
        }
        source.defs.insert(name, pos);
    }
    for (name, arity, pos) in &p.uses {
        match env.get(name) {
            None => {
                return Err(ParseError::Undefined {
                    pos: *pos,
                    name: name.clone(),
                })
            }
            Some(d) if d.params.len() != *arity => {
                return Err(ParseError::Arity {
                    pos: *pos,
                    name: name.clone(),
                    expected: d.params.len(),
                    found: *arity,
                })
            }
            Some(_) => {}
        }
    }
    if let Err(e) = env.check_guarded() {
        let pos = e
            .cycle
            .first()
            .and_then(|n| source.defs.get(n))
            .copied()
            .unwrap_or_default();
        return Err(ParseError::Guardedness { pos, source: e });
    }
    Ok(SpecFile {
        defs: env,
        main,
        source,
    })
}

/// Parses a single process in the extended syntax (stochastic binders and
/// symbolic delays allowed). Constants are not resolved.
pub fn parse_extended_term(src: &str) -> Result<Term, ParseError> {
    let mut p = run_parser(src, true)?;
    let t = p.proc()?;
    if *p.peek() != Tok::Eof {
        return p.error(format!("unexpected {}", p.peek()));
    }
    Ok(t)
}

/// Renders a term with minimal parentheses. Operators print left-nested;
/// a right-nested operand of the same operator is parenthesized so that
/// parsing the output rebuilds the same tree.
pub fn print(t: &Term) -> String {
    let mut out = String::new();
    write_term(t, Level::Par, true, &mut out);
    out
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    Par,
    Sum,
    Unary,
}

fn write_prefix(p: &Prefix, out: &mut String) {
    match p {
        Prefix::Output { subject, object } => out.push_str(&format!("{subject}<{object}>")),
        Prefix::Input { subject, bound } => out.push_str(&format!("{subject}({bound})")),
        Prefix::Tau => out.push_str("tau"),
        Prefix::Delay(r) => out.push_str(&format!("({r})")),
        Prefix::SymbolicDelay(q) => out.push_str(&format!("({q})")),
    }
}

/// `tail` is true when nothing follows in the enclosing expression, which is
/// the only place a bare `new` may appear.
fn write_term(t: &Term, level: Level, tail: bool, out: &mut String) {
    let wrap = |out: &mut String, f: &dyn Fn(&mut String)| {
        out.push('(');
        f(out);
        out.push(')');
    };
    match t {
        Term::Nil => out.push('0'),
        Term::Const(a, args) => {
            let args: Vec<&str> = args.iter().map(|n| n.id()).collect();
            out.push_str(&format!("{a}({})", args.join(", ")));
        }
        Term::Prefixed(p, c) => {
            write_prefix(p, out);
            out.push('.');
            write_term(c, Level::Unary, tail, out);
        }
        Term::Sum(l, r) => {
            let body = |out: &mut String, tail: bool| {
                write_term(l, Level::Sum, false, out);
                out.push_str(" + ");
                write_term(r, Level::Unary, tail, out);
            };
            if level > Level::Sum {
                wrap(out, &|o| body(o, true));
            } else {
                body(out, tail);
            }
        }
        Term::Par(l, r) => {
            let body = |out: &mut String, tail: bool| {
                write_term(l, Level::Par, false, out);
                out.push_str(" | ");
                write_term(r, Level::Sum, tail, out);
            };
            if level > Level::Par {
                wrap(out, &|o| body(o, true));
            } else {
                body(out, tail);
            }
        }
        Term::Restrict(n, anno, b) => {
            let body = |out: &mut String| {
                match anno {
                    Some(r) => out.push_str(&format!("new {n}->{r} in ")),
                    None => out.push_str(&format!("new {n} in ")),
                }
                write_term(b, Level::Par, true, out);
            };
            if tail {
                body(out);
            } else {
                wrap(out, &body);
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::alpha_equal;

    fn ch(s: &str) -> Name {
        Name::channel(s)
    }

    #[test]
    fn twin_loop_parses() {
        let s = parse("A() := (5).A()  main := A() | A()").unwrap();
        assert_eq!(s.defs.len(), 1);
        let a = s.defs.get("A").unwrap();
        assert_eq!(
            a.body,
            Term::delay(Rate::parse("5").unwrap(), Term::constant("A", vec![]))
        );
        assert_eq!(
            s.main,
            Term::par(Term::constant("A", vec![]), Term::constant("A", vec![]))
        );
    }

    #[test]
    fn nil_main() {
        assert_eq!(parse("main := 0").unwrap().main, Term::Nil);
    }

    #[test]
    fn precedence_of_new_and_parallel() {
        let s = parse("main := new x in x<y>.0 | x(z).tau.0").unwrap();
        let expect = Term::new_channel(
            ch("x"),
            Term::par(
                Term::output(ch("x"), ch("y"), Term::Nil),
                Term::input(ch("x"), ch("z"), Term::tau(Term::Nil)),
            ),
        );
        assert_eq!(s.main, expect);
    }

    #[test]
    fn prefix_binds_tighter_than_sum_and_par() {
        let t = parse_extended_term("a<b>.0 + tau.0 | (2).0").unwrap();
        let expect = Term::par(
            Term::sum(
                Term::output(ch("a"), ch("b"), Term::Nil),
                Term::tau(Term::Nil),
            ),
            Term::delay(Rate::parse("2").unwrap(), Term::Nil),
        );
        assert_eq!(t, expect);
    }

    #[test]
    fn printing_examples() {
        assert_eq!(print(&Term::Nil), "0");
        let s = parse("A() := (5).A()  main := A() | A()").unwrap();
        let body = &s.defs.get("A").unwrap().body;
        let ex10 = Term::par(body.clone(), body.clone());
        assert_eq!(print(&ex10), "(5).A() | (5).A()");
        let t = Term::restrict(
            Name::stochastic("q"),
            Some(Rate::parse("5").unwrap()),
            Term::prefixed(Prefix::SymbolicDelay(Name::stochastic("q")), Term::Nil),
        );
        assert_eq!(print(&t), "new q->5 in (q).0");
    }

    #[test]
    fn printing_parenthesizes_when_needed() {
        for src in [
            "a.0",
            "tau.(a<b>.0 | b(c).0)",
            "tau.0 + (tau.0 + tau.0)",
            "tau.0 | (tau.0 | tau.0)",
            "(new x in x<a>.0) | tau.0",
            "tau.new x in x<a>.0 | a(y).0",
            "(tau.new x in x<a>.0) | tau.0",
            "tau.(tau.0 + tau.0) + (5.25).0",
        ] {
            let src = if src == "a.0" { "tau.0" } else { src };
            let t = parse_extended_term(src).unwrap();
            let back = parse_extended_term(&print(&t)).unwrap();
            assert!(alpha_equal(&t, &back), "{src} -> {}", print(&t));
        }
        let t = parse_extended_term("tau.(a<b>.0 | b(c).0)").unwrap();
        assert_eq!(print(&t), "tau.(a<b>.0 | b(c).0)");
        let t = parse_extended_term("tau.new x in x<a>.0 | a(y).0").unwrap();
        assert_eq!(print(&t), "tau.new x in x<a>.0 | a(y).0");
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse("main := a<b>.0 +\n  A()").unwrap_err();
        assert_eq!(e.pos(), Pos { line: 2, col: 3 });
        assert!(matches!(e, ParseError::Syntax { .. }));

        let e = parse("main := (0).0").unwrap_err();
        assert!(matches!(e, ParseError::NonPositiveRate { .. }), "{e}");

        let e = parse("main := B()").unwrap_err();
        assert!(matches!(e, ParseError::Undefined { .. }));

        let e = parse("A(x) := x<x>.0 main := A()").unwrap_err();
        assert!(matches!(
            e,
            ParseError::Arity {
                expected: 1,
                found: 0,
                ..
            }
        ));

        let e = parse("A() := A() | (5).0\nmain := A()").unwrap_err();
        assert!(matches!(
            e,
            ParseError::Guardedness {
                pos: Pos { line: 1, col: 1 },
                ..
            }
        ));

        let e = parse("main := new q->5 in (q).0").unwrap_err();
        assert!(matches!(e, ParseError::Syntax { .. }));
        let e = parse("main := (q).0").unwrap_err();
        assert!(matches!(e, ParseError::Syntax { .. }));

        let e = parse("A() := 0 A() := tau.0 main := 0").unwrap_err();
        assert!(matches!(e, ParseError::Duplicate { .. }));

        let e = parse("main := 0 $").unwrap_err();
        assert_eq!(e.pos(), Pos { line: 1, col: 11 });
    }

    #[test]
    fn comments_and_separators() {
        let s =
            parse("# two-state cycle\nA() := (2).B(); B() := (3).A() # back\nmain := A()").unwrap();
        assert_eq!(s.defs.len(), 2);
        assert_eq!(s.source.main, Pos { line: 3, col: 9 });
    }

    #[test]
    fn spec_round_trip() {
        let src = "F(x, y) := x(z).(z<y>.F(x, y) + tau.0)\nmain := new a in (F(a, b) | a<c>.0)\n";
        let s = parse(src).unwrap();
        let again = parse(&s.to_source()).unwrap();
        assert!(alpha_equal(&s.main, &again.main));
        assert_eq!(s.defs, again.defs);
    }
}
