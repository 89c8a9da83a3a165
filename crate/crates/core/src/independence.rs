//! Pre-composition checks: key-secrecy independence and structural
//! independence of encrypted terms.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::strand::{message_nodes, to_strand_space, NodeCoord, Protocol};
use crate::term::{Atom, Sort, SortSignature, Term};

/// A secret of one protocol sent unprotected by the other.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct SecrecyViolation {
    pub secret: Term,
    /// Payload of the offending message.
    pub offending_term: Term,
    pub location: NodeCoord,
    /// 1-based message number in `found_in`.
    pub message: usize,
    pub owning_protocol: String,
    pub found_in: String,
}

impl fmt::Display for SecrecyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "secret {} of {} is exposed in {} message {} at {}: {}",
            self.secret, self.owning_protocol, self.found_in, self.message, self.location, self.offending_term
        )
    }
}

/// Whether `secret` occurs in `t` outside every encryption under a key in
/// `protecting`. Key positions do not count as occurrences.
fn exposed(secret: &Term, t: &Term, protecting: &BTreeSet<Atom>) -> bool {
    if t == secret {
        return true;
    }
    match t {
        Term::Pair(l, r) => exposed(secret, l, protecting) || exposed(secret, r, protecting),
        Term::Enc { body, key, .. } => {
            let safe = key.as_atom().is_some_and(|k| protecting.contains(k));
            !safe && exposed(secret, body, protecting)
        }
        Term::Empty | Term::Atom(_) => false,
    }
}

fn secrets_against(owner: &Protocol, other: &Protocol, out: &mut Vec<SecrecyViolation>) {
    if owner.secrets.is_empty() {
        return;
    }
    let protecting = other.long_term_keys();
    let space = to_strand_space(other);
    let nodes = message_nodes(other);
    for (idx, (m, (sender, _))) in other.messages.iter().zip(&nodes).enumerate() {
        for s in &owner.secrets {
            if exposed(s, &m.payload, &protecting) {
                out.push(SecrecyViolation {
                    secret: s.clone(),
                    offending_term: m.payload.clone(),
                    location: space.coord(*sender),
                    message: idx + 1,
                    owning_protocol: owner.name.clone(),
                    found_in: other.name.clone(),
                });
            }
        }
    }
}

/// Secrets of either protocol that the other sends in clear or under a
/// key that is not long-term.
pub fn check_secrecy_independence(p1: &Protocol, p2: &Protocol) -> Vec<SecrecyViolation> {
    let mut out = Vec::new();
    secrets_against(p1, p2, &mut out);
    secrets_against(p2, p1, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Renaming {
    pub protocol: String,
    pub from: String,
    pub to: String,
}

impl fmt::Display for Renaming {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} -> {}", self.protocol, self.from, self.to)
    }
}

/// Appends primes to `name` until it is unused in both protocols.
pub fn fresh_name(name: &str, p1: &Protocol, p2: &Protocol) -> String {
    let mut candidate = format!("{name}'");
    while p1.sorts.contains_key(&candidate) || p2.sorts.contains_key(&candidate) {
        candidate.push('\'');
    }
    candidate
}

/// Freshens, in `p2`, every non-role atom shared by both protocols that
/// belongs to a secret involved in a secrecy violation.
pub fn rename_conflicts(p1: &Protocol, p2: &Protocol) -> (Protocol, Protocol, Vec<Renaming>) {
    let violations = check_secrecy_independence(p1, p2);
    let shared: BTreeSet<Atom> = {
        let a1 = p1.used_atoms();
        p2.used_atoms().intersection(&a1).cloned().collect()
    };
    let targets: BTreeSet<Atom> = violations
        .iter()
        .flat_map(|v| v.secret.atoms())
        .filter(|a| a.sort() != Sort::Role && shared.contains(a))
        .collect();
    let mut renamed = p2.clone();
    let mut report = Vec::new();
    for a in targets {
        let fresh = Atom::new(fresh_name(a.name(), p1, &renamed), a.sort());
        renamed = renamed.rename_atom(&a, &fresh);
        report.push(Renaming {
            protocol: p2.name.clone(),
            from: a.name().to_string(),
            to: fresh.name().to_string(),
        });
    }
    (p1.clone(), renamed, report)
}

/// Where an encrypted term is sent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct TermSite {
    pub protocol: String,
    pub message: usize,
    pub node: NodeCoord,
    pub term: Term,
}

impl fmt::Display for TermSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} message {} at {}: {}", self.protocol, self.message, self.node, self.term)
    }
}

/// Two encryptions participants cannot tell apart by structure.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct StructuralClash {
    pub signature: SortSignature,
    pub key_signature: SortSignature,
    pub left: TermSite,
    pub right: TermSite,
}

impl fmt::Display for StructuralClash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} clashes: {} / {}", self.signature, self.left, self.right)
    }
}

/// Every distinct encrypted subterm sent in `p`, at its first site.
fn encrypted_sites(p: &Protocol) -> Vec<TermSite> {
    let space = to_strand_space(p);
    let nodes = message_nodes(p);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (idx, (m, (sender, _))) in p.messages.iter().zip(&nodes).enumerate() {
        for t in m.payload.subterms() {
            if t.is_encrypted() && seen.insert(t.clone()) {
                out.push(TermSite {
                    protocol: p.name.clone(),
                    message: idx + 1,
                    node: space.coord(*sender),
                    term: t.clone(),
                });
            }
        }
    }
    out
}

fn key_signature(t: &Term) -> SortSignature {
    match t.as_enc() {
        Some((_, _, key)) => key.canonicalize(),
        None => Term::Empty.canonicalize(),
    }
}

/// Cross-protocol pairs of encryptions with the same function whose keys
/// and bodies have equal canonical forms.
pub fn check_structural_independence(p1: &Protocol, p2: &Protocol) -> Vec<StructuralClash> {
    let left = encrypted_sites(p1);
    let right = encrypted_sites(p2);
    let mut out = Vec::new();
    for a in &left {
        let sig = a.term.canonicalize();
        for b in &right {
            if b.term.canonicalize() == sig {
                out.push(StructuralClash {
                    key_signature: key_signature(&a.term),
                    signature: sig.clone(),
                    left: a.clone(),
                    right: b.clone(),
                });
            }
        }
    }
    out
}

/// The same check inside a single protocol: distinct encryptions under
/// the same concrete function and key, sent in different messages, whose
/// bodies have equal canonical forms.
pub fn check_message_independence(p: &Protocol) -> Vec<StructuralClash> {
    let sites = encrypted_sites(p);
    let mut out = Vec::new();
    for (i, a) in sites.iter().enumerate() {
        let (body_a, func_a, key_a) = a.term.as_enc().expect("encrypted site");
        for b in &sites[i + 1..] {
            let (body_b, func_b, key_b) = b.term.as_enc().expect("encrypted site");
            if a.message == b.message || func_a != func_b || key_a != key_b {
                continue;
            }
            if body_a.canonicalize() == body_b.canonicalize() {
                out.push(StructuralClash {
                    signature: a.term.canonicalize(),
                    key_signature: key_a.canonicalize(),
                    left: a.clone(),
                    right: b.clone(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::parser::parse_protocol;

    #[test]
    fn corpus_nb_violation() {
        let (w, y) = corpus::pair();
        let v = check_secrecy_independence(&w, &y);
        assert!(!v.is_empty());
        assert!(v.iter().all(|v| v.secret.to_string() == "Nb"));
        assert!(v.iter().any(|v| v.message == 2 && v.offending_term.to_string() == "Nb"));
        assert!(v.iter().all(|v| v.owning_protocol == "LoweYahalom"));
    }

    #[test]
    fn rename_clears_violation() {
        let (w, y) = corpus::pair();
        let (w2, y2, report) = rename_conflicts(&w, &y);
        assert_eq!(w2, w);
        assert_eq!(report.len(), 1);
        assert_eq!((report[0].from.as_str(), report[0].to.as_str()), ("Nb", "Nb'"));
        assert!(y2.secrets.iter().any(|s| s.to_string() == "Nb'"));
        assert!(check_secrecy_independence(&w2, &y2).is_empty());
        let (_, _, again) = rename_conflicts(&w2, &y2);
        assert!(again.is_empty());
    }

    #[test]
    fn symmetric_reporting() {
        let (w, y) = corpus::pair();
        let mut a: Vec<_> = check_secrecy_independence(&w, &y)
            .into_iter()
            .map(|v| (v.secret, v.offending_term, v.owning_protocol))
            .collect();
        let mut b: Vec<_> = check_secrecy_independence(&y, &w)
            .into_iter()
            .map(|v| (v.secret, v.offending_term, v.owning_protocol))
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn disjoint_vocabularies() {
        let p1 = parse_protocol("protocol P\nroles A, B\nnonces Na\nsecrets: Na\n1. A -> B : Na\n").unwrap();
        let p2 = parse_protocol("protocol Q\nroles C, D\nnonces Nc\nsecrets: Nc\n1. C -> D : Nc\n").unwrap();
        assert!(check_secrecy_independence(&p1, &p2).is_empty());
        let (_, _, r) = rename_conflicts(&p1, &p2);
        assert!(r.is_empty());
    }

    #[test]
    fn long_term_key_protects() {
        let owner = parse_protocol("protocol P\nroles A, B\nnonces N\nsecrets: N\n1. A -> B : N\n").unwrap();
        let safe = parse_protocol(
            "protocol Q\nroles A, B\nnonces N\nkeys K\nknows A: K\nknows B: K\n1. A -> B : {N}sk(K)\n",
        )
        .unwrap();
        assert!(check_secrecy_independence(&owner, &safe).is_empty());
        let session = parse_protocol(
            "protocol Q\nroles A, B, S\nnonces N\nkeys K, Kab\nknows A: K\nknows S: K, Kab\n\
             1. S -> A : {Kab}sk(K)\n2. A -> B : {N}sk(Kab)\n",
        )
        .unwrap();
        let v = check_secrecy_independence(&owner, &session);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, 2);
    }

    #[test]
    fn two_shared_secrets_two_renamings() {
        let p1 = parse_protocol("protocol P\nroles A, B\nnonces N, M\n1. A -> B : N, M\n").unwrap();
        let p2 = parse_protocol("protocol Q\nroles A, B\nnonces N, M\nsecrets: N, M\n1. A -> B : N, M\n").unwrap();
        let (a, b, r) = rename_conflicts(&p1, &p2);
        assert_eq!(r.len(), 2);
        assert!(check_secrecy_independence(&a, &b).is_empty());
    }

    #[test]
    fn structural_clash_same_shape() {
        let p1 = parse_protocol("protocol P\nroles A, B\nnonces N\nkeys K\n1. A -> B : {N}sk(K)\n").unwrap();
        let p2 = parse_protocol("protocol Q\nroles A, B\nnonces M\nkeys L\n1. A -> B : {M}sk(L)\n").unwrap();
        let c = check_structural_independence(&p1, &p2);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].signature.to_string(), "{n}sk(k)");
        assert_eq!(c[0].key_signature.to_string(), "k");
        let p3 = parse_protocol("protocol R\nroles A, B\nnonces M\nkeys L\n1. A -> B : {M}pk(L)\n").unwrap();
        assert!(check_structural_independence(&p1, &p3).is_empty());
    }

    #[test]
    fn corpus_structurally_independent() {
        let (w, y) = corpus::pair();
        assert!(check_structural_independence(&w, &y).is_empty());
    }

    #[test]
    fn message_independence_within_protocol() {
        let p = parse_protocol(
            "protocol P\nroles A, B\nnonces N, M\nkeys K\n1. A -> B : {N}sk(K)\n2. B -> A : {M}sk(K)\n",
        )
        .unwrap();
        assert_eq!(check_message_independence(&p).len(), 1);
        let q = parse_protocol(
            "protocol P\nroles A, B\nnonces N, M\nkeys K\n1. A -> B : {N}sk(K)\n2. B -> A : {M, A}sk(K)\n",
        )
        .unwrap();
        assert!(check_message_independence(&q).is_empty());
    }
}
