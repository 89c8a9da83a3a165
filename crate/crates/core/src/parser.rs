//! The `.spc` protocol description format.
//!
//! ```text
//! # comment
//! protocol WooLamPi3
//! roles A, B, S
//! nonces Nb
//! keys Kas, Kbs
//! keypair Ka_pub, Ka_priv
//! knows A: A, B, S, Kas
//! secrets: Nb
//! 1. A -> B : A
//! 2. B -> A : Nb
//! 3. A -> B : {Nb}sk(Kas)
//! ```
//!
//! Declarations may appear in any order relative to their uses. Lists in
//! `knows` and `secrets:` lines are comma separated, so a pair inside such a
//! list has to be parenthesised.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::strand::{Message, Protocol};
use crate::term::{Atom, FuncName, Sort, Term};

/// Prefix of machine-generated memory keys.
pub const MEMORY_KEY_PREFIX: &str = "_mem_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiagnosticKind {
    #[error("{0}")]
    Syntax(String),
    #[error("missing `protocol <name>` header")]
    MissingHeader,
    #[error("undeclared atom `{0}`")]
    Undeclared(String),
    #[error("`{0}` is declared twice")]
    Duplicate(String),
    #[error("`{name}` declared as {first} and again as {second}")]
    SortConflict { name: String, first: Sort, second: Sort },
    #[error("`{0}` is not a declared role")]
    NotARole(String),
    #[error("sender and receiver are both `{0}`")]
    SelfMessage(String),
    #[error("function mk is reserved for memory strands")]
    ReservedFunction,
    #[error("name `{0}` is reserved")]
    ReservedName(String),
    #[error("secret {0} occurs in no message and no role's knowledge")]
    UnusedSecret(String),
    #[error("expected message number {expected}, found {found}")]
    MessageNumber { expected: usize, found: usize },
    #[error("the empty term `.` must stand alone")]
    NestedEmpty,
    #[error("`{0}` in a keypair is not a key")]
    KeypairSort(String),
    #[error("encryption key {0} is not a single key atom")]
    NonAtomicKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub severity: Severity,
    pub kind: DiagnosticKind,
}

impl Diagnostic {
    fn error(line: usize, column: usize, kind: DiagnosticKind) -> Self {
        Diagnostic {
            line,
            column,
            severity: Severity::Error,
            kind,
        }
    }

    fn warning(line: usize, column: usize, kind: DiagnosticKind) -> Self {
        Diagnostic {
            line,
            column,
            severity: Severity::Warning,
            kind,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{}:{}: {sev}: {}", self.line, self.column, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                f.write_char('\n')?;
            }
            d.fmt(f)?;
        }
        Ok(())
    }
}

/// Where things were declared, for diagnostics downstream.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceMap {
    pub header_line: usize,
    pub declarations: BTreeMap<String, (usize, usize)>,
    pub message_lines: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SpecDocument {
    pub text: String,
    pub protocol: Protocol,
    pub warnings: Vec<Diagnostic>,
    pub source_map: SourceMap,
}

pub fn parse_protocol(text: &str) -> Result<Protocol, ParseError> {
    parse_document(text).map(|d| d.protocol)
}

pub fn parse_document(text: &str) -> Result<SpecDocument, ParseError> {
    Parser::new(text).run()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Dot,
    Comma,
    LBrace,
    RBrace,
    LParen,
    RParen,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

/// Tokens with their 1-based columns. `offset` is the column of `src[0]`.
fn lex(src: &str, line: usize, offset: usize) -> Result<Vec<(Tok, usize)>, Diagnostic> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = offset + i;
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '.' => Tok::Dot,
            ',' => Tok::Comma,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            c if is_ident_start(c) => {
                let start = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), col));
                continue;
            }
            other => {
                return Err(Diagnostic::error(
                    line,
                    col,
                    DiagnosticKind::Syntax(format!("unexpected character `{other}`")),
                ))
            }
        };
        out.push((tok, col));
        i += 1;
    }
    Ok(out)
}

struct TermParser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    end_col: usize,
    sorts: &'a BTreeMap<String, Sort>,
    errors: Vec<Diagnostic>,
    warnings: Vec<Diagnostic>,
}

impl<'a> TermParser<'a> {
    fn new(
        src: &str,
        line: usize,
        offset: usize,
        sorts: &'a BTreeMap<String, Sort>,
    ) -> Result<Self, Diagnostic> {
        Ok(TermParser {
            toks: lex(src, line, offset)?,
            pos: 0,
            line,
            end_col: offset + src.chars().count(),
            sorts,
            errors: Vec::new(),
            warnings: Vec::new(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|(_, c)| *c).unwrap_or(self.end_col)
    }

    fn syntax(&self, msg: String) -> Diagnostic {
        Diagnostic::error(self.line, self.col(), DiagnosticKind::Syntax(msg))
    }

    fn expect(&mut self, want: Tok) -> Result<(), Diagnostic> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.syntax(format!("expected {want}, found {t}"))),
            None => Err(self.syntax(format!("expected {want}, found end of line"))),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn finish(&self) -> Result<(), Diagnostic> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.syntax(format!("unexpected {t}"))),
        }
    }

    /// `term := item (',' term)?`
    fn term(&mut self) -> Result<Term, Diagnostic> {
        let first_col = self.col();
        let head = self.item()?;
        if self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            let tail_col = self.col();
            let tail = self.term()?;
            if head.is_empty() {
                return Err(Diagnostic::error(self.line, first_col, DiagnosticKind::NestedEmpty));
            }
            if tail.is_empty() {
                return Err(Diagnostic::error(self.line, tail_col, DiagnosticKind::NestedEmpty));
            }
            return Ok(Term::pair(head, tail));
        }
        Ok(head)
    }

    /// `list := item (',' item)*`
    fn list(&mut self) -> Result<Vec<Term>, Diagnostic> {
        let mut out = Vec::new();
        if self.at_end() {
            return Ok(out);
        }
        out.push(self.item()?);
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            out.push(self.item()?);
        }
        self.finish()?;
        Ok(out)
    }

    fn inner(&mut self) -> Result<Term, Diagnostic> {
        let col = self.col();
        let t = self.term()?;
        if t.is_empty() {
            return Err(Diagnostic::error(self.line, col, DiagnosticKind::NestedEmpty));
        }
        Ok(t)
    }

    fn item(&mut self) -> Result<Term, Diagnostic> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Dot) => {
                self.pos += 1;
                Ok(Term::Empty)
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let t = self.inner()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            Some(Tok::LBrace) => {
                self.pos += 1;
                let body = self.inner()?;
                self.expect(Tok::RBrace)?;
                let fcol = self.col();
                let func = match self.peek().cloned() {
                    Some(Tok::Ident(name)) => match FuncName::from_name(&name) {
                        Some(f) => f,
                        None => {
                            return Err(self.syntax(format!(
                                "unknown function `{name}` (expected sk, pk, pvk or h)"
                            )))
                        }
                    },
                    Some(t) => return Err(self.syntax(format!("expected function name, found {t}"))),
                    None => return Err(self.syntax("expected function name, found end of line".into())),
                };
                self.pos += 1;
                if func == FuncName::Mk {
                    self.errors
                        .push(Diagnostic::error(self.line, fcol, DiagnosticKind::ReservedFunction));
                }
                self.expect(Tok::LParen)?;
                let kcol = self.col();
                let key = self.inner()?;
                self.expect(Tok::RParen)?;
                if key.as_atom().map(Atom::sort) != Some(Sort::Key) {
                    self.warnings.push(Diagnostic::warning(
                        self.line,
                        kcol,
                        DiagnosticKind::NonAtomicKey(key.to_string()),
                    ));
                }
                Ok(Term::enc(body, func, key))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match self.sorts.get(&name) {
                    Some(sort) => Ok(Term::atom(Atom::new(name, *sort))),
                    None => {
                        self.errors
                            .push(Diagnostic::error(self.line, col, DiagnosticKind::Undeclared(name.clone())));
                        // Keep going so every undeclared atom is reported.
                        Ok(Term::atom(Atom::nonce(name)))
                    }
                }
            }
            Some(t) => Err(self.syntax(format!("expected a term, found {t}"))),
            None => Err(self.syntax("expected a term, found end of line".into())),
        }
    }
}

struct Line<'a> {
    no: usize,
    /// Column of the first character of `text`.
    indent: usize,
    text: &'a str,
}

impl Line<'_> {
    /// The remainder after a leading keyword, with its column.
    fn after(&self, kw_len: usize) -> (&str, usize) {
        let rest = &self.text[kw_len..];
        (rest, self.indent + self.text[..kw_len].chars().count())
    }
}

struct Parser<'a> {
    text: &'a str,
    errors: Vec<Diagnostic>,
    warnings: Vec<Diagnostic>,
}

const DECL_KEYWORDS: [(&str, Sort); 3] = [("roles", Sort::Role), ("nonces", Sort::Nonce), ("keys", Sort::Key)];

fn keyword(text: &str, kw: &str) -> bool {
    text.strip_prefix(kw)
        .map(|r| r.is_empty() || r.starts_with(char::is_whitespace))
        .unwrap_or(false)
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text,
            errors: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn lines(&self) -> Vec<Line<'a>> {
        self.text
            .lines()
            .enumerate()
            .filter_map(|(i, raw)| {
                let code = raw.split('#').next().unwrap_or("");
                let trimmed = code.trim_start();
                let indent = code.chars().count() - trimmed.chars().count() + 1;
                let text = trimmed.trim_end();
                (!text.is_empty()).then_some(Line {
                    no: i + 1,
                    indent,
                    text,
                })
            })
            .collect()
    }

    /// Comma separated identifiers.
    fn names(&mut self, line: &Line, src: &str, offset: usize) -> Vec<(String, usize)> {
        let toks = match lex(src, line.no, offset) {
            Ok(t) => t,
            Err(d) => {
                self.errors.push(d);
                return Vec::new();
            }
        };
        let mut out = Vec::new();
        let mut expect_name = true;
        for (tok, col) in &toks {
            match (expect_name, tok) {
                (true, Tok::Ident(n)) => {
                    out.push((n.clone(), *col));
                    expect_name = false;
                }
                (false, Tok::Comma) => expect_name = true,
                (_, t) => {
                    self.errors.push(Diagnostic::error(
                        line.no,
                        *col,
                        DiagnosticKind::Syntax(format!("unexpected {t} in name list")),
                    ));
                    return out;
                }
            }
        }
        if expect_name {
            let col = toks.last().map(|(_, c)| *c).unwrap_or(offset);
            self.errors.push(Diagnostic::error(
                line.no,
                col,
                DiagnosticKind::Syntax("expected a name".into()),
            ));
        }
        out
    }

    fn parse_with<T>(
        &mut self,
        sorts: &BTreeMap<String, Sort>,
        line: &Line,
        src: &str,
        offset: usize,
        f: impl FnOnce(&mut TermParser) -> Result<T, Diagnostic>,
    ) -> Option<T> {
        let mut tp = match TermParser::new(src, line.no, offset, sorts) {
            Ok(tp) => tp,
            Err(d) => {
                self.errors.push(d);
                return None;
            }
        };
        let res = f(&mut tp);
        self.errors.append(&mut tp.errors);
        self.warnings.append(&mut tp.warnings);
        match res {
            Ok(t) => Some(t),
            Err(d) => {
                self.errors.push(d);
                None
            }
        }
    }

    fn run(mut self) -> Result<SpecDocument, ParseError> {
        let lines = self.lines();
        let mut map = SourceMap::default();
        let mut name: Option<String> = None;
        let mut roles: Vec<Atom> = Vec::new();
        let mut sorts: BTreeMap<String, Sort> = BTreeMap::new();
        let mut keypairs: Vec<(Atom, Atom)> = Vec::new();
        let mut body_lines = Vec::new();

        // Pass 1: header and declarations.
        for line in &lines {
            let t = line.text;
            if keyword(t, "protocol") {
                let (rest, off) = line.after("protocol".len());
                let names = self.names(line, rest, off);
                if name.is_some() {
                    self.errors.push(Diagnostic::error(
                        line.no,
                        line.indent,
                        DiagnosticKind::Syntax("second `protocol` header".into()),
                    ));
                } else if let [(n, _)] = names.as_slice() {
                    name = Some(n.clone());
                    map.header_line = line.no;
                } else if !names.is_empty() {
                    self.errors.push(Diagnostic::error(
                        line.no,
                        off,
                        DiagnosticKind::Syntax("protocol name must be a single identifier".into()),
                    ));
                }
            } else if let Some((kw, sort)) = DECL_KEYWORDS.iter().find(|(kw, _)| keyword(t, kw)) {
                let (rest, off) = line.after(kw.len());
                for (n, col) in self.names(line, rest, off) {
                    if self.declare(&mut sorts, &mut map, &n, *sort, line.no, col) && *sort == Sort::Role {
                        roles.push(Atom::role(n));
                    }
                }
            } else if keyword(t, "keypair") {
                let (rest, off) = line.after("keypair".len());
                let names = self.names(line, rest, off);
                if let [(p, pc), (q, qc)] = names.as_slice() {
                    let ok_p = self.declare(&mut sorts, &mut map, p, Sort::Key, line.no, *pc);
                    let ok_q = self.declare(&mut sorts, &mut map, q, Sort::Key, line.no, *qc);
                    if ok_p && ok_q {
                        keypairs.push((Atom::key(p.clone()), Atom::key(q.clone())));
                    }
                } else if !names.is_empty() {
                    self.errors.push(Diagnostic::error(
                        line.no,
                        off,
                        DiagnosticKind::Syntax("keypair takes exactly two keys".into()),
                    ));
                }
            } else {
                body_lines.push(line);
            }
        }

        let Some(name) = name else {
            self.errors.insert(0, Diagnostic::error(1, 1, DiagnosticKind::MissingHeader));
            return Err(self.fail());
        };

        // Pass 2: knowledge, secrets and messages.
        let mut knowledge: BTreeMap<String, BTreeSet<Term>> =
            roles.iter().map(|r| (r.name().to_string(), BTreeSet::new())).collect();
        let mut secrets: Vec<(Term, usize, usize)> = Vec::new();
        let mut messages: Vec<Message> = Vec::new();
        for line in body_lines {
            let t = line.text;
            if keyword(t, "knows") {
                let (rest, off) = line.after("knows".len());
                let Some(colon) = rest.find(':') else {
                    self.errors.push(Diagnostic::error(
                        line.no,
                        off,
                        DiagnosticKind::Syntax("expected `knows <role>: <terms>`".into()),
                    ));
                    continue;
                };
                let role_src = &rest[..colon];
                let items_off = off + rest[..=colon].chars().count();
                let role_names = self.names(line, role_src, off);
                let [(role, rcol)] = role_names.as_slice() else {
                    continue;
                };
                if sorts.get(role) != Some(&Sort::Role) {
                    self.errors
                        .push(Diagnostic::error(line.no, *rcol, DiagnosticKind::NotARole(role.clone())));
                    continue;
                }
                if let Some(items) = self.parse_with(&sorts, line, &rest[colon + 1..], items_off, |p| p.list()) {
                    knowledge.entry(role.clone()).or_default().extend(items);
                }
            } else if let Some(rest) = t.strip_prefix("secrets:") {
                let off = line.indent + "secrets:".len();
                let mut col = off;
                if let Some(items) = self.parse_with(&sorts, line, rest, off, |p| {
                    col = p.col();
                    p.list()
                }) {
                    secrets.extend(items.into_iter().map(|s| (s, line.no, col)));
                }
            } else if t.starts_with(|c: char| c.is_ascii_digit()) {
                if let Some(m) = self.message(&sorts, line, messages.len() + 1) {
                    messages.push(m);
                    map.message_lines.push(line.no);
                }
            } else {
                let word = t.split_whitespace().next().unwrap_or(t);
                self.errors.push(Diagnostic::error(
                    line.no,
                    line.indent,
                    DiagnosticKind::Syntax(format!("unknown declaration `{word}`")),
                ));
            }
        }

        for (s, line, col) in &secrets {
            let occurs = messages.iter().any(|m| s.is_subterm_of(&m.payload))
                || knowledge.values().flatten().any(|k| s.is_subterm_of(k));
            if !occurs {
                self.errors
                    .push(Diagnostic::error(*line, *col, DiagnosticKind::UnusedSecret(s.to_string())));
            }
        }

        if !self.errors.is_empty() {
            return Err(self.fail());
        }
        let protocol = Protocol {
            name,
            roles,
            sorts,
            keypairs,
            knowledge,
            secrets: secrets.into_iter().map(|(s, _, _)| s).collect(),
            messages,
        };
        Ok(SpecDocument {
            text: self.text.to_string(),
            protocol,
            warnings: self.warnings,
            source_map: map,
        })
    }

    fn fail(mut self) -> ParseError {
        self.errors.sort_by_key(|d| (d.line, d.column));
        ParseError {
            diagnostics: self.errors,
        }
    }

    fn declare(
        &mut self,
        sorts: &mut BTreeMap<String, Sort>,
        map: &mut SourceMap,
        name: &str,
        sort: Sort,
        line: usize,
        col: usize,
    ) -> bool {
        if name.starts_with(MEMORY_KEY_PREFIX) || FuncName::from_name(name).is_some() {
            self.errors
                .push(Diagnostic::error(line, col, DiagnosticKind::ReservedName(name.to_string())));
            return false;
        }
        match sorts.get(name) {
            Some(prev) if *prev == sort => {
                self.errors
                    .push(Diagnostic::error(line, col, DiagnosticKind::Duplicate(name.to_string())));
                false
            }
            Some(prev) => {
                self.errors.push(Diagnostic::error(
                    line,
                    col,
                    DiagnosticKind::SortConflict {
                        name: name.to_string(),
                        first: *prev,
                        second: sort,
                    },
                ));
                false
            }
            None => {
                sorts.insert(name.to_string(), sort);
                map.declarations.insert(name.to_string(), (line, col));
                true
            }
        }
    }

    /// `i. X -> Y : term`
    fn message(&mut self, sorts: &BTreeMap<String, Sort>, line: &Line, expected: usize) -> Option<Message> {
        let t = line.text;
        let digits = t.chars().take_while(char::is_ascii_digit).count();
        let number: usize = t[..digits].parse().unwrap_or(0);
        let syntax = |col: usize, msg: &str| {
            Diagnostic::error(line.no, col, DiagnosticKind::Syntax(msg.to_string()))
        };
        if !t[digits..].starts_with('.') {
            self.errors.push(syntax(line.indent + digits, "expected `.` after message number"));
            return None;
        }
        if number != expected {
            self.errors.push(Diagnostic::error(
                line.no,
                line.indent,
                DiagnosticKind::MessageNumber { expected, found: number },
            ));
        }
        let rest = &t[digits + 1..];
        let rest_off = line.indent + digits + 1;
        let (Some(arrow), Some(colon)) = (rest.find("->"), rest.find(':')) else {
            self.errors.push(syntax(rest_off, "expected `X -> Y : <term>`"));
            return None;
        };
        if colon < arrow {
            self.errors.push(syntax(rest_off + colon, "expected `X -> Y : <term>`"));
            return None;
        }
        let role = |src: &str, off: usize, this: &mut Self| -> Option<Atom> {
            let names = this.names(line, src, off);
            let [(n, col)] = names.as_slice() else {
                if !names.is_empty() {
                    this.errors.push(syntax(off, "expected a single role name"));
                }
                return None;
            };
            match sorts.get(n) {
                Some(Sort::Role) => Some(Atom::role(n.clone())),
                Some(_) => {
                    this.errors
                        .push(Diagnostic::error(line.no, *col, DiagnosticKind::NotARole(n.clone())));
                    None
                }
                None => {
                    this.errors
                        .push(Diagnostic::error(line.no, *col, DiagnosticKind::Undeclared(n.clone())));
                    None
                }
            }
        };
        let sender = role(&rest[..arrow], rest_off, self);
        let recv_off = rest_off + rest[..arrow + 2].chars().count();
        let receiver = role(&rest[arrow + 2..colon], recv_off, self);
        let term_off = rest_off + rest[..=colon].chars().count();
        let payload = self.parse_with(sorts, line, &rest[colon + 1..], term_off, |p| {
            let t = p.term()?;
            p.finish()?;
            Ok(t)
        });
        let (sender, receiver, payload) = (sender?, receiver?, payload?);
        if sender == receiver {
            self.errors.push(Diagnostic::error(
                line.no,
                recv_off,
                DiagnosticKind::SelfMessage(sender.name().to_string()),
            ));
        }
        Some(Message::new(sender, receiver, payload))
    }
}

/// Item form used in comma separated lists: pairs get parentheses.
fn list_item(t: &Term) -> String {
    match t {
        Term::Pair(..) => format!("({t})"),
        _ => t.to_string(),
    }
}

fn join_items<'t>(items: impl IntoIterator<Item = &'t Term>) -> String {
    items.into_iter().map(list_item).collect::<Vec<_>>().join(", ")
}

/// Canonical text form. Declarations come out in a fixed order: roles in
/// declaration order, then nonces and keys by name, then keypairs.
pub fn serialize_protocol(p: &Protocol) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "protocol {}", p.name);
    let names = |sort: Sort| -> Vec<&str> {
        let paired: BTreeSet<&str> = p.keypairs.iter().flat_map(|(a, b)| [a.name(), b.name()]).collect();
        p.sorts
            .iter()
            .filter(|(n, s)| **s == sort && !paired.contains(n.as_str()))
            .map(|(n, _)| n.as_str())
            .collect()
    };
    let roles: Vec<&str> = p.roles.iter().map(Atom::name).collect();
    if !roles.is_empty() {
        let _ = writeln!(out, "roles {}", roles.join(", "));
    }
    for (kw, sort) in [("nonces", Sort::Nonce), ("keys", Sort::Key)] {
        let ns = names(sort);
        if !ns.is_empty() {
            let _ = writeln!(out, "{kw} {}", ns.join(", "));
        }
    }
    for (a, b) in &p.keypairs {
        let _ = writeln!(out, "keypair {a}, {b}");
    }
    for r in &p.roles {
        if let Some(ks) = p.knowledge.get(r.name()).filter(|ks| !ks.is_empty()) {
            let _ = writeln!(out, "knows {r}: {}", join_items(ks));
        }
    }
    if !p.secrets.is_empty() {
        let _ = writeln!(out, "secrets: {}", join_items(&p.secrets));
    }
    for (i, m) in p.messages.iter().enumerate() {
        let _ = writeln!(out, "{}. {} -> {} : {}", i + 1, m.sender, m.receiver, m.payload);
    }
    out
}
