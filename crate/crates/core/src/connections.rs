//! Term connections and security properties.
//!
//! A connection links a term sent at one node to a term sent at a causally
//! later node. Partial connections join a free term with an encryption that
//! contains it (in either direction); complete connections join two
//! encryptions where the first, or the body of the first under the same
//! function and key, occurs inside the second. Candidate terms range over
//! every subterm of every transmitted payload.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::memory::is_memory_traffic;
use crate::strand::{Classifier, KStrandSpace, NodeCoord, NodeRef, Precedence, Sign};
use crate::term::Term;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionKind {
    Partial,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectionEnd {
    pub node: NodeRef,
    pub sign: Sign,
    pub term: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Connection {
    pub kind: ConnectionKind,
    pub pre: ConnectionEnd,
    pub post: ConnectionEnd,
}

impl Connection {
    pub fn is_complete(&self) -> bool {
        self.kind == ConnectionKind::Complete
    }
}

/// A security property: a set of connections.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SecurityProperty {
    pub connections: BTreeSet<Connection>,
}

impl SecurityProperty {
    pub fn complete(&self) -> impl Iterator<Item = &Connection> {
        self.connections.iter().filter(|c| c.is_complete())
    }

    pub fn partial(&self) -> impl Iterator<Item = &Connection> {
        self.connections.iter().filter(|c| !c.is_complete())
    }

    pub fn len(&self) -> usize {
        self.connections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.connections.is_empty()
    }
}

/// `pre ↦p post`.
pub fn is_partial(pre: &Term, post: &Term) -> bool {
    match (pre.is_encrypted(), post.is_encrypted()) {
        (false, true) => pre.is_subterm_of(post),
        (true, false) => post.is_subterm_of(pre),
        _ => false,
    }
}

/// `pre ↦c post`.
pub fn is_complete(pre: &Term, post: &Term) -> bool {
    let (Some((body, func, key)), Some((_, post_func, post_key))) = (pre.as_enc(), post.as_enc()) else {
        return false;
    };
    if pre == post {
        return false;
    }
    pre.is_subterm_of(post) || (func == post_func && key == post_key && body.is_subterm_of(post))
}

/// Every (positive participant node, subterm) pair.
fn candidate_ends(space: &KStrandSpace) -> Vec<ConnectionEnd> {
    let mut out = Vec::new();
    for (sid, s) in space.strands.iter().enumerate() {
        if s.classifier != Classifier::Participant {
            continue;
        }
        for (i, e) in s.trace.iter().enumerate() {
            if e.sign != Sign::Plus || is_memory_traffic(&e.term) {
                continue;
            }
            for t in e.term.subterms() {
                if t.is_empty() {
                    continue;
                }
                out.push(ConnectionEnd {
                    node: NodeRef::new(sid, i + 1),
                    sign: e.sign,
                    term: t.clone(),
                });
            }
        }
    }
    out
}

fn extract(space: &KStrandSpace, kind: Option<ConnectionKind>) -> BTreeSet<Connection> {
    let ends = candidate_ends(space);
    let prec: Precedence = space.precedence();
    let mut out = BTreeSet::new();
    for pre in &ends {
        for post in &ends {
            if pre.node == post.node || !prec.precedes(pre.node, post.node) {
                continue;
            }
            let found = if is_complete(&pre.term, &post.term) {
                Some(ConnectionKind::Complete)
            } else if is_partial(&pre.term, &post.term) {
                Some(ConnectionKind::Partial)
            } else {
                None
            };
            if let Some(k) = found.filter(|k| kind.is_none_or(|want| want == *k)) {
                out.insert(Connection {
                    kind: k,
                    pre: pre.clone(),
                    post: post.clone(),
                });
            }
        }
    }
    out
}

pub fn partial_connections(space: &KStrandSpace) -> BTreeSet<Connection> {
    extract(space, Some(ConnectionKind::Partial))
}

pub fn complete_connections(space: &KStrandSpace) -> BTreeSet<Connection> {
    extract(space, Some(ConnectionKind::Complete))
}

pub fn security_property(space: &KStrandSpace) -> SecurityProperty {
    SecurityProperty {
        connections: extract(space, None),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct EndReport {
    pub node: NodeCoord,
    pub sign: Sign,
    pub term: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ConnectionReport {
    pub kind: ConnectionKind,
    pub pre: EndReport,
    pub post: EndReport,
}

impl ConnectionReport {
    pub fn new(space: &KStrandSpace, c: &Connection) -> Self {
        let end = |e: &ConnectionEnd| EndReport {
            node: space.coord(e.node),
            sign: e.sign,
            term: e.term.clone(),
        };
        ConnectionReport {
            kind: c.kind,
            pre: end(&c.pre),
            post: end(&c.post),
        }
    }
}

impl std::fmt::Display for ConnectionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let arrow = match self.kind {
            ConnectionKind::Partial => "|->p",
            ConnectionKind::Complete => "|->c",
        };
        write!(
            f,
            "{} {} {arrow} {} {}",
            self.pre.node, self.pre.term, self.post.node, self.post.term
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_protocol;
    use crate::strand::to_strand_space;

    #[test]
    fn no_encryption_no_connections() {
        let p = parse_protocol("protocol P\nroles A, B\nnonces Na, Nb\n1. A -> B : Na\n2. B -> A : Na, Nb\n").unwrap();
        assert!(security_property(&to_strand_space(&p)).is_empty());
    }

    #[test]
    fn single_encrypted_message() {
        let p = parse_protocol("protocol P\nroles A, B\nnonces Na\nkeys K\n1. A -> B : {Na}sk(K)\n").unwrap();
        let space = to_strand_space(&p);
        assert!(partial_connections(&space).is_empty());
        assert!(complete_connections(&space).is_empty());
    }

    #[test]
    fn forward_partial_connection() {
        let p = parse_protocol(
            "protocol P\nroles A, B\nnonces Nb\nkeys K\n1. B -> A : Nb\n2. A -> B : {Nb}sk(K)\n",
        )
        .unwrap();
        let space = to_strand_space(&p);
        let partial = partial_connections(&space);
        assert_eq!(partial.len(), 1);
        let c = partial.iter().next().unwrap();
        assert_eq!(c.pre.term.to_string(), "Nb");
        assert_eq!(c.post.term.to_string(), "{Nb}sk(K)");
    }

    #[test]
    fn complete_relation() {
        let t = |s: &str| {
            let text = format!("protocol Q\nroles A, B\nnonces N, M\nkeys K, L\n1. A -> B : {s}\n");
            parse_protocol(&text).unwrap().messages[0].payload.clone()
        };
        assert!(is_complete(&t("{N}sk(K)"), &t("{M, {N}sk(K)}sk(L)")));
        assert!(is_complete(&t("{N}sk(K)"), &t("{M, N}sk(K)")));
        assert!(!is_complete(&t("{N}sk(K)"), &t("{M, N}sk(L)")));
        assert!(!is_complete(&t("{N}sk(K)"), &t("{N}sk(K)")));
        assert!(is_partial(&t("N"), &t("{M, N}sk(L)")));
        assert!(is_partial(&t("{M, N}sk(L)"), &t("N")));
        assert!(!is_partial(&t("N"), &t("M, N")));
    }
}
