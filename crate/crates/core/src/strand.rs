//! Protocols and their k-strand space representation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::term::{Atom, FuncName, Sort, Term};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Message {
    pub sender: Atom,
    pub receiver: Atom,
    pub payload: Term,
}

impl Message {
    pub fn new(sender: Atom, receiver: Atom, payload: Term) -> Self {
        Message {
            sender,
            receiver,
            payload,
        }
    }

    pub fn endpoints(&self) -> (&Atom, &Atom) {
        (&self.sender, &self.receiver)
    }
}

/// A protocol in Alice&Bob form: declarations, per-role initial knowledge,
/// declared secrets and the ordered message list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Protocol {
    pub name: String,
    pub roles: Vec<Atom>,
    /// Every declared atom, roles included.
    pub sorts: BTreeMap<String, Sort>,
    /// Public/private key pairs, as `(public, private)`.
    pub keypairs: Vec<(Atom, Atom)>,
    /// Initial knowledge per role name. Every role has an entry.
    pub knowledge: BTreeMap<String, BTreeSet<Term>>,
    pub secrets: BTreeSet<Term>,
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolViolation {
    #[error("atom `{0}` is not declared")]
    Undeclared(String),
    #[error("atom `{name}` is used as {used} but declared as {declared}")]
    SortConflict {
        name: String,
        used: Sort,
        declared: Sort,
    },
    #[error("`{0}` is not a declared role")]
    NotARole(String),
    #[error("message {0}: sender and receiver are both `{1}`")]
    SelfMessage(usize, String),
    #[error("reserved function mk used in {0}")]
    ReservedFunction(String),
    #[error("empty term nested inside {0}")]
    NestedEmpty(String),
    #[error("secret {0} occurs in no message and no role's knowledge")]
    UnusedSecret(String),
    #[error("knowledge declared for unknown role `{0}`")]
    UnknownKnowledgeRole(String),
    #[error("role `{0}` has no knowledge entry")]
    MissingKnowledge(String),
    #[error("keypair member `{0}` is not a key")]
    KeypairSort(String),
}

impl Protocol {
    /// An empty protocol with no declarations.
    pub fn new(name: impl Into<String>) -> Self {
        Protocol {
            name: name.into(),
            roles: Vec::new(),
            sorts: BTreeMap::new(),
            keypairs: Vec::new(),
            knowledge: BTreeMap::new(),
            secrets: BTreeSet::new(),
            messages: Vec::new(),
        }
    }

    pub fn atom(&self, name: &str) -> Option<Atom> {
        self.sorts.get(name).map(|s| Atom::new(name, *s))
    }

    pub fn role(&self, name: &str) -> Option<&Atom> {
        self.roles.iter().find(|r| r.name() == name)
    }

    pub fn knowledge_of(&self, role: &Atom) -> BTreeSet<Term> {
        self.knowledge.get(role.name()).cloned().unwrap_or_default()
    }

    /// Decryption key for `{_}func(key)`, if one exists.
    ///
    /// `sk` and `mk` are symmetric; `pk`/`pvk` need the partner of a declared
    /// keypair; `h` is one-way.
    pub fn inverse_key(&self, func: FuncName, key: &Term) -> Option<Term> {
        inverse_key(&self.keypairs, func, key)
    }

    /// Key atoms in some role's initial knowledge that are never transmitted
    /// as message content.
    pub fn long_term_keys(&self) -> BTreeSet<Atom> {
        let mut transmitted = BTreeSet::new();
        for m in &self.messages {
            collect_content_atoms(&m.payload, &mut transmitted);
        }
        self.knowledge
            .values()
            .flatten()
            .filter_map(Term::as_atom)
            .filter(|a| a.sort() == Sort::Key && !transmitted.contains(*a))
            .cloned()
            .collect()
    }

    /// All atoms used anywhere in the protocol body.
    pub fn used_atoms(&self) -> BTreeSet<Atom> {
        let mut out: BTreeSet<Atom> = self.roles.iter().cloned().collect();
        for t in self
            .knowledge
            .values()
            .flatten()
            .chain(&self.secrets)
            .chain(self.messages.iter().map(|m| &m.payload))
        {
            out.extend(t.atoms());
        }
        out
    }

    /// Consistent renaming of one atom throughout the protocol.
    pub fn rename_atom(&self, old: &Atom, fresh: &Atom) -> Protocol {
        let map = |t: &Term| t.map_atoms(&|a| if a == old { fresh.clone() } else { a.clone() });
        let ren = |a: &Atom| if a == old { fresh.clone() } else { a.clone() };
        let mut sorts = self.sorts.clone();
        if let Some(s) = sorts.remove(old.name()) {
            sorts.insert(fresh.name().to_string(), s);
        }
        Protocol {
            name: self.name.clone(),
            roles: self.roles.iter().map(ren).collect(),
            sorts,
            keypairs: self.keypairs.iter().map(|(p, q)| (ren(p), ren(q))).collect(),
            knowledge: self
                .knowledge
                .iter()
                .map(|(r, ks)| {
                    let r = if r == old.name() { fresh.name().to_string() } else { r.clone() };
                    (r, ks.iter().map(map).collect())
                })
                .collect(),
            secrets: self.secrets.iter().map(map).collect(),
            messages: self
                .messages
                .iter()
                .map(|m| Message::new(ren(&m.sender), ren(&m.receiver), map(&m.payload)))
                .collect(),
        }
    }

    pub fn validate(&self) -> Vec<ProtocolViolation> {
        let mut out = Vec::new();
        let check_atoms = |t: &Term, out: &mut Vec<ProtocolViolation>| {
            for a in t.atoms() {
                match self.sorts.get(a.name()) {
                    None => out.push(ProtocolViolation::Undeclared(a.name().to_string())),
                    Some(s) if *s != a.sort() => out.push(ProtocolViolation::SortConflict {
                        name: a.name().to_string(),
                        used: a.sort(),
                        declared: *s,
                    }),
                    _ => {}
                }
            }
            if t.contains_func(FuncName::Mk) {
                out.push(ProtocolViolation::ReservedFunction(t.to_string()));
            }
            if has_nested_empty(t) {
                out.push(ProtocolViolation::NestedEmpty(t.to_string()));
            }
        };
        for r in &self.roles {
            if r.sort() != Sort::Role || self.sorts.get(r.name()) != Some(&Sort::Role) {
                out.push(ProtocolViolation::NotARole(r.name().to_string()));
            }
            if !self.knowledge.contains_key(r.name()) {
                out.push(ProtocolViolation::MissingKnowledge(r.name().to_string()));
            }
        }
        for (role, ks) in &self.knowledge {
            if self.role(role).is_none() {
                out.push(ProtocolViolation::UnknownKnowledgeRole(role.clone()));
            }
            for t in ks {
                check_atoms(t, &mut out);
            }
        }
        for (p, q) in &self.keypairs {
            for a in [p, q] {
                if a.sort() != Sort::Key || self.sorts.get(a.name()) != Some(&Sort::Key) {
                    out.push(ProtocolViolation::KeypairSort(a.name().to_string()));
                }
            }
        }
        for (i, m) in self.messages.iter().enumerate() {
            for r in [&m.sender, &m.receiver] {
                if self.role(r.name()) != Some(r) {
                    out.push(ProtocolViolation::NotARole(r.name().to_string()));
                }
            }
            if m.sender == m.receiver {
                out.push(ProtocolViolation::SelfMessage(i + 1, m.sender.name().to_string()));
            }
            check_atoms(&m.payload, &mut out);
        }
        for s in &self.secrets {
            check_atoms(s, &mut out);
            let occurs = self.messages.iter().any(|m| s.is_subterm_of(&m.payload))
                || self.knowledge.values().flatten().any(|k| s.is_subterm_of(k));
            if !occurs {
                out.push(ProtocolViolation::UnusedSecret(s.to_string()));
            }
        }
        out
    }
}

pub(crate) fn inverse_key(keypairs: &[(Atom, Atom)], func: FuncName, key: &Term) -> Option<Term> {
    match func {
        FuncName::Sk | FuncName::Mk => Some(key.clone()),
        FuncName::H => None,
        FuncName::Pk | FuncName::Pvk => {
            let atom = key.as_atom()?;
            keypairs.iter().find_map(|(p, q)| {
                if p == atom {
                    Some(Term::Atom(q.clone()))
                } else if q == atom {
                    Some(Term::Atom(p.clone()))
                } else {
                    None
                }
            })
        }
    }
}

/// Atoms appearing outside key positions.
fn collect_content_atoms(t: &Term, out: &mut BTreeSet<Atom>) {
    match t {
        Term::Atom(a) => {
            out.insert(a.clone());
        }
        Term::Pair(l, r) => {
            collect_content_atoms(l, out);
            collect_content_atoms(r, out);
        }
        Term::Enc { body, .. } => collect_content_atoms(body, out),
        Term::Empty => {}
    }
}

fn has_nested_empty(t: &Term) -> bool {
    fn inner(t: &Term) -> bool {
        match t {
            Term::Empty => true,
            Term::Atom(_) => false,
            Term::Pair(l, r) => inner(l) || inner(r),
            Term::Enc { body, key, .. } => inner(body) || inner(key),
        }
    }
    match t {
        Term::Pair(l, r) => inner(l) || inner(r),
        Term::Enc { body, key, .. } => inner(body) || inner(key),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

impl Serialize for Sign {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SignedTerm {
    pub sign: Sign,
    pub term: Term,
}

impl SignedTerm {
    pub fn send(term: Term) -> Self {
        SignedTerm {
            sign: Sign::Plus,
            term,
        }
    }

    pub fn recv(term: Term) -> Self {
        SignedTerm {
            sign: Sign::Minus,
            term,
        }
    }
}

impl fmt::Display for SignedTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.sign, self.term)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Classifier {
    #[serde(rename = "C_R")]
    Participant,
    #[serde(rename = "C_M")]
    Memory,
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classifier::Participant => "C_R",
            Classifier::Memory => "C_M",
        })
    }
}

/// `⟨K, c, r, s⟩`: knowledge, classifier, participant and trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KStrand {
    pub knowledge: BTreeSet<Term>,
    pub classifier: Classifier,
    pub participant: Atom,
    pub trace: Vec<SignedTerm>,
}

impl KStrand {
    pub fn new(participant: Atom, classifier: Classifier, knowledge: BTreeSet<Term>) -> Self {
        KStrand {
            knowledge,
            classifier,
            participant,
            trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    /// Trace entry at a 1-based position.
    pub fn at(&self, index: usize) -> Option<&SignedTerm> {
        index.checked_sub(1).and_then(|i| self.trace.get(i))
    }
}

/// A node: a 1-based position on a strand of some space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeRef {
    pub strand: usize,
    pub index: usize,
}

impl NodeRef {
    pub fn new(strand: usize, index: usize) -> Self {
        NodeRef { strand, index }
    }
}

/// A node in report form: strand role and classifier instead of a raw index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct NodeCoord {
    pub role: String,
    pub classifier: Classifier,
    pub index: usize,
}

impl fmt::Display for NodeCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.classifier {
            Classifier::Participant => write!(f, "<{},{}>", self.role, self.index),
            Classifier::Memory => write!(f, "<mem:{},{}>", self.role, self.index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeError {
    #[error("no strand {0} in space")]
    NoStrand(usize),
    #[error("node index {index} out of range 1..={len} on strand {strand}")]
    OutOfRange {
        strand: usize,
        index: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceViolation {
    #[error("edge endpoint {0:?} does not exist")]
    DanglingNode(NodeRef),
    #[error("edge {0:?} -> {1:?} stays on one strand")]
    SameStrand(NodeRef, NodeRef),
    #[error("edge {0:?} -> {1:?} does not run from a positive to a negative node")]
    WrongSigns(NodeRef, NodeRef),
    #[error("edge {0:?} -> {1:?} joins different terms")]
    TermMismatch(NodeRef, NodeRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct KStrandSpace {
    pub strands: Vec<KStrand>,
    /// Communication edges `+n1 -> -n2`.
    pub cross_edges: Vec<(NodeRef, NodeRef)>,
}

impl KStrandSpace {
    pub fn strand(&self, id: usize) -> Option<&KStrand> {
        self.strands.get(id)
    }

    fn entry(&self, n: NodeRef) -> Result<&SignedTerm, NodeError> {
        let s = self.strands.get(n.strand).ok_or(NodeError::NoStrand(n.strand))?;
        s.at(n.index).ok_or(NodeError::OutOfRange {
            strand: n.strand,
            index: n.index,
            len: s.len(),
        })
    }

    pub fn node_term(&self, n: NodeRef) -> Result<&Term, NodeError> {
        self.entry(n).map(|e| &e.term)
    }

    pub fn node_sign(&self, n: NodeRef) -> Result<Sign, NodeError> {
        self.entry(n).map(|e| e.sign)
    }

    pub fn coord(&self, n: NodeRef) -> NodeCoord {
        let s = &self.strands[n.strand];
        NodeCoord {
            role: s.participant.name().to_string(),
            classifier: s.classifier,
            index: n.index,
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.strands
            .iter()
            .enumerate()
            .flat_map(|(sid, s)| (1..=s.len()).map(move |i| NodeRef::new(sid, i)))
    }

    pub fn node_count(&self) -> usize {
        self.strands.iter().map(KStrand::len).sum()
    }

    pub fn participant_strand(&self, role: &Atom) -> Option<usize> {
        self.strands
            .iter()
            .position(|s| s.classifier == Classifier::Participant && &s.participant == role)
    }

    /// Terms of every positive node, plus `Empty`.
    pub fn sent_terms(&self) -> BTreeSet<Term> {
        let mut out: BTreeSet<Term> = self
            .strands
            .iter()
            .flat_map(|s| s.trace.iter())
            .filter(|e| e.sign == Sign::Plus)
            .map(|e| e.term.clone())
            .collect();
        out.insert(Term::Empty);
        out
    }

    pub fn validate(&self) -> Vec<SpaceViolation> {
        let mut out = Vec::new();
        for &(from, to) in &self.cross_edges {
            let (a, b) = match (self.entry(from), self.entry(to)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(_), _) => {
                    out.push(SpaceViolation::DanglingNode(from));
                    continue;
                }
                (_, Err(_)) => {
                    out.push(SpaceViolation::DanglingNode(to));
                    continue;
                }
            };
            if from.strand == to.strand {
                out.push(SpaceViolation::SameStrand(from, to));
            }
            if a.sign != Sign::Plus || b.sign != Sign::Minus {
                out.push(SpaceViolation::WrongSigns(from, to));
            }
            if a.term != b.term {
                out.push(SpaceViolation::TermMismatch(from, to));
            }
        }
        out
    }

    /// Strict causal order over nodes, generated by strand succession and
    /// communication edges.
    pub fn precedence(&self) -> Precedence {
        let mut offsets = Vec::with_capacity(self.strands.len());
        let mut total = 0;
        for s in &self.strands {
            offsets.push(total);
            total += s.len();
        }
        let flat = |n: NodeRef| offsets[n.strand] + n.index - 1;
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); total];
        for (sid, s) in self.strands.iter().enumerate() {
            for i in 1..s.len() {
                succ[flat(NodeRef::new(sid, i))].push(flat(NodeRef::new(sid, i + 1)));
            }
        }
        for &(a, b) in &self.cross_edges {
            if self.entry(a).is_ok() && self.entry(b).is_ok() {
                succ[flat(a)].push(flat(b));
            }
        }
        let mut reach = vec![vec![false; total]; total];
        for (start, row) in reach.iter_mut().enumerate() {
            let mut queue: VecDeque<usize> = succ[start].iter().copied().collect();
            while let Some(n) = queue.pop_front() {
                if !row[n] {
                    row[n] = true;
                    queue.extend(succ[n].iter().copied());
                }
            }
        }
        Precedence { offsets, reach }
    }

    /// The global message list, read back by ordering communication edges
    /// topologically (ties go to the earliest-listed edge).
    pub fn recover_messages(&self) -> Vec<Message> {
        let prec = self.precedence();
        let mut pending: Vec<(NodeRef, NodeRef)> = self.cross_edges.clone();
        let mut out = Vec::new();
        while !pending.is_empty() {
            let pos = pending
                .iter()
                .position(|&(a, _)| {
                    !pending.iter().any(|&(other, _)| other != a && prec.precedes(other, a))
                })
                .unwrap_or(0);
            let (a, b) = pending.remove(pos);
            out.push(Message::new(
                self.strands[a.strand].participant.clone(),
                self.strands[b.strand].participant.clone(),
                self.entry(a).map(|e| e.term.clone()).unwrap_or(Term::Empty),
            ));
        }
        out
    }
}

pub struct Precedence {
    offsets: Vec<usize>,
    reach: Vec<Vec<bool>>,
}

impl Precedence {
    /// `a` strictly precedes `b`.
    pub fn precedes(&self, a: NodeRef, b: NodeRef) -> bool {
        let fa = self.offsets[a.strand] + a.index - 1;
        let fb = self.offsets[b.strand] + b.index - 1;
        self.reach[fa][fb]
    }
}

/// One participant strand per role, in declaration order; message `i` adds
/// `+payload` on the sender, `-payload` on the receiver and an edge between
/// them.
pub fn to_strand_space(p: &Protocol) -> KStrandSpace {
    build_space(p).0
}

/// Sender and receiver node of every message, in message order.
pub fn message_nodes(p: &Protocol) -> Vec<(NodeRef, NodeRef)> {
    build_space(p).1
}

fn build_space(p: &Protocol) -> (KStrandSpace, Vec<(NodeRef, NodeRef)>) {
    let mut space = KStrandSpace::default();
    for r in &p.roles {
        space
            .strands
            .push(KStrand::new(r.clone(), Classifier::Participant, p.knowledge_of(r)));
    }
    let mut nodes = Vec::with_capacity(p.messages.len());
    for m in &p.messages {
        let (Some(si), Some(ri)) = (
            p.roles.iter().position(|r| r == &m.sender),
            p.roles.iter().position(|r| r == &m.receiver),
        ) else {
            continue;
        };
        space.strands[si].trace.push(SignedTerm::send(m.payload.clone()));
        let from = NodeRef::new(si, space.strands[si].len());
        space.strands[ri].trace.push(SignedTerm::recv(m.payload.clone()));
        let to = NodeRef::new(ri, space.strands[ri].len());
        space.cross_edges.push((from, to));
        nodes.push((from, to));
    }
    (space, nodes)
}
