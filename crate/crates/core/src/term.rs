//! Symbolic terms: atoms, pairing and encryption.
//!
//! Terms are finite trees. Pairing is binary; the surface form `a, b, c`
//! reads as `Pair(a, Pair(b, c))`, and equality is plain tree equality, so
//! no associativity is assumed.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

/// The basic set an atom is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sort {
    Role,
    Nonce,
    Key,
}

impl Sort {
    /// Placeholder name used by canonical (sort-only) terms.
    pub fn symbol(self) -> &'static str {
        match self {
            Sort::Role => "r",
            Sort::Nonce => "n",
            Sort::Key => "k",
        }
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sort::Role => "role",
            Sort::Nonce => "nonce",
            Sort::Key => "key",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    name: String,
    sort: Sort,
}

impl Atom {
    pub fn new(name: impl Into<String>, sort: Sort) -> Self {
        Atom {
            name: name.into(),
            sort,
        }
    }

    pub fn role(name: impl Into<String>) -> Self {
        Atom::new(name, Sort::Role)
    }

    pub fn nonce(name: impl Into<String>) -> Self {
        Atom::new(name, Sort::Nonce)
    }

    pub fn key(name: impl Into<String>) -> Self {
        Atom::new(name, Sort::Key)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sort(&self) -> Sort {
        self.sort
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl Serialize for Atom {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name)
    }
}

/// Encryption function tags. `Mk` is reserved for memory-strand traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FuncName {
    Sk,
    Pk,
    Pvk,
    H,
    Mk,
}

impl FuncName {
    pub const ALL: [FuncName; 5] = [
        FuncName::Sk,
        FuncName::Pk,
        FuncName::Pvk,
        FuncName::H,
        FuncName::Mk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FuncName::Sk => "sk",
            FuncName::Pk => "pk",
            FuncName::Pvk => "pvk",
            FuncName::H => "h",
            FuncName::Mk => "mk",
        }
    }

    pub fn from_name(name: &str) -> Option<FuncName> {
        FuncName::ALL.into_iter().find(|f| f.as_str() == name)
    }
}

impl fmt::Display for FuncName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    /// The `.` term.
    Empty,
    Atom(Atom),
    Pair(Box<Term>, Box<Term>),
    Enc {
        body: Box<Term>,
        func: FuncName,
        key: Box<Term>,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TermError {
    #[error("cannot rename {old} ({old_sort}) to {fresh} ({fresh_sort}): sorts differ")]
    SortMismatch {
        old: String,
        old_sort: Sort,
        fresh: String,
        fresh_sort: Sort,
    },
}

impl Term {
    pub fn atom(atom: Atom) -> Term {
        Term::Atom(atom)
    }

    pub fn pair(left: Term, right: Term) -> Term {
        Term::Pair(Box::new(left), Box::new(right))
    }

    pub fn enc(body: Term, func: FuncName, key: Term) -> Term {
        Term::Enc {
            body: Box::new(body),
            func,
            key: Box::new(key),
        }
    }

    /// Right-associated tuple: `[a, b, c]` becomes `Pair(a, Pair(b, c))`.
    ///
    /// An empty slice yields `Empty`.
    pub fn tuple(items: Vec<Term>) -> Term {
        let mut iter = items.into_iter().rev();
        match iter.next() {
            None => Term::Empty,
            Some(last) => iter.fold(last, |acc, t| Term::pair(t, acc)),
        }
    }

    pub fn is_encrypted(&self) -> bool {
        matches!(self, Term::Enc { .. })
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Term::Empty)
    }

    pub fn as_atom(&self) -> Option<&Atom> {
        match self {
            Term::Atom(a) => Some(a),
            _ => None,
        }
    }

    /// Body, function and key of an encryption.
    pub fn as_enc(&self) -> Option<(&Term, FuncName, &Term)> {
        match self {
            Term::Enc { body, func, key } => Some((body, *func, key)),
            _ => None,
        }
    }

    /// `self ≺ other`: `self` occurs somewhere in `other`, including key
    /// positions. Reflexive.
    pub fn is_subterm_of(&self, other: &Term) -> bool {
        if self == other {
            return true;
        }
        match other {
            Term::Pair(l, r) => self.is_subterm_of(l) || self.is_subterm_of(r),
            Term::Enc { body, key, .. } => self.is_subterm_of(body) || self.is_subterm_of(key),
            Term::Empty | Term::Atom(_) => false,
        }
    }

    /// Number of constructor nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Term::Empty | Term::Atom(_) => 1,
            Term::Pair(l, r) => 1 + l.size() + r.size(),
            Term::Enc { body, key, .. } => 1 + body.size() + key.size(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Term::Empty | Term::Atom(_) => 1,
            Term::Pair(l, r) => 1 + l.depth().max(r.depth()),
            Term::Enc { body, key, .. } => 1 + body.depth().max(key.depth()),
        }
    }

    /// Every distinct subterm, `self` included, in pre-order of first
    /// occurrence.
    pub fn subterms(&self) -> Vec<&Term> {
        let mut out: Vec<&Term> = Vec::new();
        self.collect_subterms(&mut out);
        out
    }

    fn collect_subterms<'a>(&'a self, out: &mut Vec<&'a Term>) {
        if !out.contains(&self) {
            out.push(self);
        }
        match self {
            Term::Pair(l, r) => {
                l.collect_subterms(out);
                r.collect_subterms(out);
            }
            Term::Enc { body, key, .. } => {
                body.collect_subterms(out);
                key.collect_subterms(out);
            }
            Term::Empty | Term::Atom(_) => {}
        }
    }

    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<Atom>) {
        match self {
            Term::Atom(a) => {
                out.insert(a.clone());
            }
            Term::Pair(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
            Term::Enc { body, key, .. } => {
                body.collect_atoms(out);
                key.collect_atoms(out);
            }
            Term::Empty => {}
        }
    }

    pub fn contains_func(&self, func: FuncName) -> bool {
        match self {
            Term::Enc { body, func: f, key } => {
                *f == func || body.contains_func(func) || key.contains_func(func)
            }
            Term::Pair(l, r) => l.contains_func(func) || r.contains_func(func),
            Term::Empty | Term::Atom(_) => false,
        }
    }

    /// Replace every occurrence of `old` by `fresh`.
    pub fn rename_atom(&self, old: &Atom, fresh: &Atom) -> Result<Term, TermError> {
        if old.sort != fresh.sort {
            return Err(TermError::SortMismatch {
                old: old.name.clone(),
                old_sort: old.sort,
                fresh: fresh.name.clone(),
                fresh_sort: fresh.sort,
            });
        }
        Ok(self.map_atoms(&|a| if a == old { fresh.clone() } else { a.clone() }))
    }

    pub fn map_atoms(&self, f: &dyn Fn(&Atom) -> Atom) -> Term {
        match self {
            Term::Empty => Term::Empty,
            Term::Atom(a) => Term::Atom(f(a)),
            Term::Pair(l, r) => Term::pair(l.map_atoms(f), r.map_atoms(f)),
            Term::Enc { body, func, key } => Term::enc(body.map_atoms(f), *func, key.map_atoms(f)),
        }
    }

    /// Replace every occurrence of the subterm `from` by `to`. Occurrences are
    /// matched top-down; the replacement itself is not searched again.
    pub fn replace(&self, from: &Term, to: &Term) -> Term {
        if self == from {
            return to.clone();
        }
        match self {
            Term::Empty | Term::Atom(_) => self.clone(),
            Term::Pair(l, r) => Term::pair(l.replace(from, to), r.replace(from, to)),
            Term::Enc { body, func, key } => {
                Term::enc(body.replace(from, to), *func, key.replace(from, to))
            }
        }
    }

    pub fn canonicalize(&self) -> SortSignature {
        SortSignature(self.map_atoms(&|a| Atom::new(a.sort.symbol(), a.sort)))
    }

    fn fmt_in(&self, f: &mut fmt::Formatter<'_>, pair_left: bool) -> fmt::Result {
        match self {
            Term::Empty => f.write_str("."),
            Term::Atom(a) => f.write_str(&a.name),
            Term::Pair(l, r) => {
                if pair_left {
                    f.write_str("(")?;
                }
                l.fmt_in(f, true)?;
                f.write_str(", ")?;
                r.fmt_in(f, false)?;
                if pair_left {
                    f.write_str(")")?;
                }
                Ok(())
            }
            Term::Enc { body, func, key } => {
                f.write_str("{")?;
                body.fmt_in(f, false)?;
                write!(f, "}}{func}(")?;
                key.fmt_in(f, false)?;
                f.write_str(")")
            }
        }
    }
}

/// Surface syntax. A pair in the left component of another pair is
/// parenthesised; right-nested pairs print flat.
impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_in(f, false)
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A term with every atom replaced by its sort symbol (`r`, `n`, `k`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SortSignature(Term);

impl SortSignature {
    pub fn as_term(&self) -> &Term {
        &self.0
    }
}

impl fmt::Display for SortSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}
