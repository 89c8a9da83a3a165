//! Dynamic knowledge: memory strands and term derivability.
//!
//! Every participant strand is paired with a memory strand. After each
//! reception the participant forwards the received term to its memory under
//! `mk(Km)` and gets back the accumulated knowledge term.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::parser::MEMORY_KEY_PREFIX;
use crate::strand::{inverse_key, Classifier, KStrand, KStrandSpace, NodeRef, Sign, SignedTerm};
use crate::term::{Atom, FuncName, Term};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("strand of `{0}` is already a memory strand")]
    NotAParticipant(String),
    #[error("strand of `{0}` already carries mk-encrypted terms")]
    AlreadyExpanded(String),
}

/// Memory key of a participant. The prefix cannot appear in parsed input.
pub fn memory_key(participant: &Atom) -> Atom {
    Atom::key(format!("{MEMORY_KEY_PREFIX}{}", participant.name()))
}

pub fn mk(term: Term, key: &Atom) -> Term {
    Term::enc(term, FuncName::Mk, Term::Atom(key.clone()))
}

/// New knowledge term after receiving `received`: the previous knowledge
/// paired with the new term.
pub fn gen_know(received: &Term, previous: &Term) -> Term {
    if previous.is_empty() {
        received.clone()
    } else {
        Term::pair(previous.clone(), received.clone())
    }
}

/// Knowledge term accumulated from the receptions in `trace[..upto]`.
/// mk-encrypted receptions are memory traffic and are skipped.
pub fn knowledge_term(trace: &[SignedTerm], upto: usize) -> Term {
    trace[..upto.min(trace.len())]
        .iter()
        .filter(|e| e.sign == Sign::Minus && !is_memory_traffic(&e.term))
        .fold(Term::Empty, |acc, e| gen_know(&e.term, &acc))
}

pub fn is_memory_traffic(t: &Term) -> bool {
    matches!(t, Term::Enc { func: FuncName::Mk, .. })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryPair {
    pub participant: KStrand,
    pub memory: KStrand,
    pub key: Atom,
    /// Communication between the two strands as `(from, to)` positions,
    /// tagged by which strand sends.
    pub links: Vec<MemoryLink>,
    /// Position of each original node in the new participant trace.
    pub index_map: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryLink {
    /// Participant position sends to memory position.
    Store(usize, usize),
    /// Memory position sends to participant position.
    Recall(usize, usize),
}

/// Expand one participant strand into a participant/memory pair.
pub fn gen_memory_strands(s: &KStrand) -> Result<MemoryPair, MemoryError> {
    if s.classifier != Classifier::Participant {
        return Err(MemoryError::NotAParticipant(s.participant.name().to_string()));
    }
    if s.trace.iter().any(|e| e.term.contains_func(FuncName::Mk)) {
        return Err(MemoryError::AlreadyExpanded(s.participant.name().to_string()));
    }
    let key = memory_key(&s.participant);
    let mut knowledge = s.knowledge.clone();
    knowledge.insert(Term::Atom(key.clone()));
    let mut participant = KStrand::new(s.participant.clone(), Classifier::Participant, knowledge.clone());
    let mut memory = KStrand::new(s.participant.clone(), Classifier::Memory, knowledge);
    let mut links = Vec::new();
    let mut index_map = Vec::with_capacity(s.len());
    let mut known = Term::Empty;

    for entry in &s.trace {
        participant.trace.push(entry.clone());
        index_map.push(participant.len());
        if entry.sign == Sign::Plus {
            continue;
        }
        let stored = mk(entry.term.clone(), &key);
        participant.trace.push(SignedTerm::send(stored.clone()));
        memory.trace.push(SignedTerm::recv(stored));
        links.push(MemoryLink::Store(participant.len(), memory.len()));

        known = gen_know(&entry.term, &known);
        let recalled = mk(known.clone(), &key);
        memory.trace.push(SignedTerm::send(recalled.clone()));
        participant.trace.push(SignedTerm::recv(recalled));
        links.push(MemoryLink::Recall(memory.len(), participant.len()));
    }
    Ok(MemoryPair {
        participant,
        memory,
        key,
        links,
        index_map,
    })
}

/// Run [`gen_memory_strands`] on every participant strand of `space`.
///
/// Participant strands keep their positions; memory strands are appended in
/// the same order. Existing communication edges are re-pointed at the shifted
/// node positions.
pub fn with_memory(space: &KStrandSpace) -> Result<KStrandSpace, MemoryError> {
    let mut out = KStrandSpace::default();
    let mut memories = Vec::new();
    let mut index_maps: Vec<Option<Vec<usize>>> = Vec::new();
    for (sid, s) in space.strands.iter().enumerate() {
        if s.classifier == Classifier::Participant {
            let pair = gen_memory_strands(s)?;
            out.strands.push(pair.participant);
            memories.push((sid, pair.memory, pair.links));
            index_maps.push(Some(pair.index_map));
        } else {
            out.strands.push(s.clone());
            index_maps.push(None);
        }
    }
    let remap = |n: NodeRef| match &index_maps[n.strand] {
        Some(map) => NodeRef::new(n.strand, map[n.index - 1]),
        None => n,
    };
    out.cross_edges = space.cross_edges.iter().map(|&(a, b)| (remap(a), remap(b))).collect();
    for (owner, strand, links) in memories {
        let mid = out.strands.len();
        out.strands.push(strand);
        for link in links {
            out.cross_edges.push(match link {
                MemoryLink::Store(p, m) => (NodeRef::new(owner, p), NodeRef::new(mid, m)),
                MemoryLink::Recall(m, p) => (NodeRef::new(mid, m), NodeRef::new(owner, p)),
            });
        }
    }
    Ok(out)
}

/// Whether `target` can be built from `knowledge` and the memory term.
///
/// Closure under pairing, projection, encryption with a derivable key, and
/// decryption when the inverse key is derivable (`sk`/`mk`: the key itself;
/// `pk`/`pvk`: the other half of a declared keypair; `h`: never).
///
/// Decomposition only ever adds subterms of what is known, so the analysis
/// reaches a fixpoint; construction is then checked top-down.
pub fn constructable(
    target: &Term,
    knowledge: &BTreeSet<Term>,
    memory: &Term,
    keypairs: &[(Atom, Atom)],
) -> bool {
    let mut known: BTreeSet<Term> = knowledge.clone();
    if !memory.is_empty() {
        known.insert(memory.clone());
    }
    analyze(&mut known, keypairs);
    synthesizable(target, &known)
}

fn synthesizable(t: &Term, known: &BTreeSet<Term>) -> bool {
    if t.is_empty() || known.contains(t) {
        return true;
    }
    match t {
        Term::Pair(l, r) => synthesizable(l, known) && synthesizable(r, known),
        Term::Enc { body, key, .. } => synthesizable(body, known) && synthesizable(key, known),
        Term::Empty | Term::Atom(_) => false,
    }
}

fn analyze(known: &mut BTreeSet<Term>, keypairs: &[(Atom, Atom)]) {
    loop {
        let mut fresh = Vec::new();
        for t in known.iter() {
            match t {
                Term::Pair(l, r) => {
                    fresh.push((**l).clone());
                    fresh.push((**r).clone());
                }
                Term::Enc { body, func, key } => {
                    if let Some(inv) = inverse_key(keypairs, *func, key) {
                        if synthesizable(&inv, known) {
                            fresh.push((**body).clone());
                        }
                    }
                }
                Term::Empty | Term::Atom(_) => {}
            }
        }
        fresh.retain(|t| !known.contains(t));
        if fresh.is_empty() {
            return;
        }
        known.extend(fresh);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(n: &str) -> Term {
        Term::Atom(Atom::nonce(n))
    }
    fn key(n: &str) -> Term {
        Term::Atom(Atom::key(n))
    }

    fn strand(trace: Vec<SignedTerm>) -> KStrand {
        let mut s = KStrand::new(Atom::role("A"), Classifier::Participant, BTreeSet::new());
        s.trace = trace;
        s
    }

    #[test]
    fn gen_know_cases() {
        assert_eq!(gen_know(&at("Nb"), &Term::Empty), at("Nb"));
        let t = gen_know(&key("Kab"), &at("Nb"));
        assert_eq!(t, Term::pair(at("Nb"), key("Kab")));
        assert!(at("Nb").is_subterm_of(&t) && key("Kab").is_subterm_of(&t));
    }

    #[test]
    fn positive_only_trace() {
        let pair = gen_memory_strands(&strand(vec![SignedTerm::send(at("a"))])).unwrap();
        assert_eq!(pair.participant.trace, vec![SignedTerm::send(at("a"))]);
        assert!(pair.memory.trace.is_empty());
        assert!(pair.participant.knowledge.contains(&Term::Atom(pair.key.clone())));
        assert!(pair.memory.knowledge.contains(&Term::Atom(pair.key.clone())));
    }

    #[test]
    fn single_reception() {
        let pair = gen_memory_strands(&strand(vec![SignedTerm::recv(at("b"))])).unwrap();
        let k = &pair.key;
        assert_eq!(
            pair.participant.trace,
            vec![
                SignedTerm::recv(at("b")),
                SignedTerm::send(mk(at("b"), k)),
                SignedTerm::recv(mk(at("b"), k)),
            ]
        );
        assert_eq!(
            pair.memory.trace,
            vec![SignedTerm::recv(mk(at("b"), k)), SignedTerm::send(mk(at("b"), k))]
        );
        assert_eq!(pair.memory.classifier, Classifier::Memory);
    }

    #[test]
    fn mixed_trace_lengths() {
        let s = strand(vec![SignedTerm::send(at("a")), SignedTerm::recv(at("b")), SignedTerm::send(at("c"))]);
        let pair = gen_memory_strands(&s).unwrap();
        assert_eq!(pair.participant.len(), 5);
        assert_eq!(pair.memory.len(), 2);
        assert_eq!(pair.index_map, vec![1, 2, 5]);
    }

    #[test]
    fn rejects_expanded_or_memory_strands() {
        let pair = gen_memory_strands(&strand(vec![SignedTerm::recv(at("b"))])).unwrap();
        assert!(matches!(
            gen_memory_strands(&pair.participant),
            Err(MemoryError::AlreadyExpanded(_))
        ));
        assert!(matches!(gen_memory_strands(&pair.memory), Err(MemoryError::NotAParticipant(_))));
    }

    #[test]
    fn constructable_examples() {
        let nb = at("Nb");
        let kas = key("Kas");
        let enc = Term::enc(nb.clone(), FuncName::Sk, kas.clone());
        assert!(constructable(&nb, &BTreeSet::from([nb.clone()]), &Term::Empty, &[]));
        assert!(constructable(&enc, &BTreeSet::from([nb.clone(), kas.clone()]), &Term::Empty, &[]));
        assert!(!constructable(&nb, &BTreeSet::from([enc.clone()]), &Term::Empty, &[]));
        assert!(constructable(&nb, &BTreeSet::from([enc.clone(), kas.clone()]), &Term::Empty, &[]));
    }

    #[test]
    fn memory_term_is_used() {
        let km = memory_key(&Atom::role("A"));
        let kab = key("Kab");
        let mem = mk(Term::pair(at("Nb"), kab.clone()), &km);
        let target = Term::enc(at("Nb"), FuncName::Sk, kab);
        assert!(!constructable(&target, &BTreeSet::new(), &mem, &[]));
        assert!(constructable(&target, &BTreeSet::from([Term::Atom(km)]), &mem, &[]));
    }

    #[test]
    fn asymmetric_and_hash() {
        let pubk = Atom::key("Kb");
        let privk = Atom::key("Kb_inv");
        let pairs = [(pubk.clone(), privk.clone())];
        let sealed = Term::enc(at("N"), FuncName::Pk, Term::Atom(pubk.clone()));
        assert!(!constructable(&at("N"), &BTreeSet::from([sealed.clone(), Term::Atom(pubk.clone())]), &Term::Empty, &pairs));
        assert!(constructable(&at("N"), &BTreeSet::from([sealed.clone(), Term::Atom(privk.clone())]), &Term::Empty, &pairs));
        let signed = Term::enc(at("N"), FuncName::Pvk, Term::Atom(privk));
        assert!(constructable(&at("N"), &BTreeSet::from([signed, Term::Atom(pubk.clone())]), &Term::Empty, &pairs));
        let hashed = Term::enc(at("N"), FuncName::H, Term::Atom(pubk.clone()));
        assert!(!constructable(&at("N"), &BTreeSet::from([hashed, Term::Atom(pubk)]), &Term::Empty, &pairs));
    }

    #[test]
    fn knowledge_term_skips_memory_traffic() {
        let s = strand(vec![SignedTerm::recv(at("b")), SignedTerm::send(at("a")), SignedTerm::recv(at("c"))]);
        let pair = gen_memory_strands(&s).unwrap();
        let t = knowledge_term(&pair.participant.trace, pair.participant.len());
        assert_eq!(t, Term::pair(at("b"), at("c")));
        assert_eq!(knowledge_term(&s.trace, 1), at("b"));
    }
}
