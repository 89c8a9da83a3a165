//! Composition of candidate protocols.
//!
//! For every fused message pair the two payloads are merged into one term.
//! When the merge rewrites a term that takes part in a connection of its
//! source protocol, every dependent occurrence is rewritten the same way so
//! the connection survives. Each realised protocol is then expanded with
//! memory strands and accepted only if every participant can construct
//! every term it sends.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::connections::{security_property, Connection, ConnectionEnd, ConnectionKind, ConnectionReport, SecurityProperty};
use crate::generator::{
    count_generated, endpoints_compatible, generate, merge_headers, step_messages, GenerateError, GeneratedCandidate,
    Step,
};
use crate::independence::{rename_conflicts, Renaming};
use crate::memory::{constructable, knowledge_term, memory_key, mk, with_memory, MemoryError};
use crate::strand::{message_nodes, to_strand_space, Classifier, KStrand, KStrandSpace, Message, NodeRef, Protocol, Sign};
use crate::term::Term;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComposeError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("replacing {modified} by {replacement} would make a term contain itself")]
    Cycle { modified: Term, replacement: Term },
    #[error("no candidate was accepted")]
    NoAccepted,
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectStrategy {
    #[default]
    MinMessages,
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComposeOptions {
    /// Embed the second term inside the first's encryption when their keys
    /// differ. When off, such terms are paired instead.
    pub embed: bool,
    /// Worker threads; 0 picks the default.
    pub jobs: usize,
    pub select: SelectStrategy,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        ComposeOptions {
            embed: true,
            jobs: 0,
            select: SelectStrategy::MinMessages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
    Rejected(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Accepted => f.write_str("accepted"),
            Verdict::Rejected(r) => write!(f, "rejected: {r}"),
        }
    }
}

/// How a fused pair was merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// Same function and key; the first body is a complete-connection end
    /// at the first node, so no connection update is issued.
    SameKeyConnected,
    /// Same function and key, with a connection update.
    SameKeyUpdate,
    /// The second term placed inside the first term's encryption.
    Embed,
    /// Plain pairing: at most one term encrypted by the first protocol is
    /// left untouched.
    Pair,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::SameKeyConnected => "same-key-connected",
            Branch::SameKeyUpdate => "same-key-update",
            Branch::Embed => "embed",
            Branch::Pair => "pair",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composed {
    pub term: Term,
    pub branch: Branch,
}

impl Composed {
    /// The first term was replaced by a new encryption.
    pub fn rewrites_first(&self) -> bool {
        self.branch != Branch::Pair
    }

    /// The second term was absorbed into a merged encryption.
    pub fn rewrites_second(&self) -> bool {
        matches!(self.branch, Branch::SameKeyConnected | Branch::SameKeyUpdate)
    }
}

/// Merge the payloads of a fused pair. `n1` is the sending node of `t1` in
/// its own protocol, whose property is `xi1`.
pub fn compose_terms(t1: &Term, t2: &Term, xi1: &SecurityProperty, n1: NodeRef, embed: bool) -> Composed {
    match (t1.as_enc(), t2.as_enc()) {
        (Some((b1, f1, k1)), Some((b2, f2, k2))) if f1 == f2 && k1 == k2 => {
            let connected = xi1.complete().any(|c| {
                (c.pre.node == n1 && &c.pre.term == b1) || (c.post.node == n1 && &c.post.term == b1)
            });
            Composed {
                term: Term::enc(Term::pair(b1.clone(), b2.clone()), f1, k1.clone()),
                branch: if connected {
                    Branch::SameKeyConnected
                } else {
                    Branch::SameKeyUpdate
                },
            }
        }
        (Some((b1, f1, k1)), _) if embed => Composed {
            term: Term::enc(Term::pair(b1.clone(), t2.clone()), f1, k1.clone()),
            branch: Branch::Embed,
        },
        _ => Composed {
            term: Term::pair(t1.clone(), t2.clone()),
            branch: Branch::Pair,
        },
    }
}

fn check_cycle(modified: &Term, replacement: &Term) -> Result<(), ComposeError> {
    if modified != replacement && modified.is_subterm_of(replacement) {
        return Err(ComposeError::Cycle {
            modified: modified.clone(),
            replacement: replacement.clone(),
        });
    }
    Ok(())
}

/// Replace `modified` by `replacement` in every node and connection end.
pub fn propagate_connection_updates(
    space: &KStrandSpace,
    modified: &Term,
    replacement: &Term,
    xi: &SecurityProperty,
) -> Result<(KStrandSpace, SecurityProperty), ComposeError> {
    check_cycle(modified, replacement)?;
    let mut out = space.clone();
    for s in &mut out.strands {
        for e in &mut s.trace {
            e.term = e.term.replace(modified, replacement);
        }
    }
    let end = |e: &ConnectionEnd| ConnectionEnd {
        node: e.node,
        sign: e.sign,
        term: e.term.replace(modified, replacement),
    };
    let connections = xi
        .connections
        .iter()
        .map(|c| Connection {
            kind: c.kind,
            pre: end(&c.pre),
            post: end(&c.post),
        })
        .collect();
    Ok((out, SecurityProperty { connections }))
}

/// One strand per distinct role, knowledge unioned, traces empty.
pub fn init_unified_space(p1: &Protocol, p2: &Protocol) -> Result<KStrandSpace, ComposeError> {
    let header = merge_headers(p1, p2, format!("{}_{}", p1.name, p2.name))?;
    Ok(to_strand_space(&header))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Action {
    pub step: Step,
    pub branch: Branch,
    pub first: Term,
    pub second: Term,
    pub result: Term,
    /// Dependent occurrences were rewritten.
    pub propagated: bool,
}

/// A connection of an input protocol, followed through the composition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConnectionImage {
    pub origin: Side,
    pub kind: ConnectionKind,
    /// 1-based message numbers in the composed protocol.
    pub pre_message: usize,
    pub pre_term: Term,
    pub post_message: usize,
    pub post_term: Term,
    /// The image is among the connections re-extracted from the result.
    pub present: bool,
}

#[derive(Debug, Clone)]
pub struct CompositionResult {
    /// 1-based position in the generated candidate stream.
    pub index: usize,
    pub candidate: GeneratedCandidate,
    pub realized: Protocol,
    /// Space of the realised protocol, before memory strands.
    pub unified: KStrandSpace,
    /// Space with memory strands.
    pub space: KStrandSpace,
    pub verdict: Verdict,
    /// Re-extracted from `unified`.
    pub property: SecurityProperty,
    pub trace: Vec<Action>,
    pub images: Vec<ConnectionImage>,
}

impl CompositionResult {
    pub fn is_accepted(&self) -> bool {
        self.verdict == Verdict::Accepted
    }

    pub fn message_count(&self) -> usize {
        self.realized.messages.len()
    }

    pub fn connections_preserved(&self) -> bool {
        self.images.iter().all(|i| i.present)
    }

    pub fn record(&self, show_memory: bool) -> CompositionRecord<'_> {
        let mut connections: Vec<_> = self
            .property
            .connections
            .iter()
            .map(|c| ConnectionReport::new(&self.unified, c))
            .collect();
        connections.sort();
        CompositionRecord {
            index: self.index,
            name: &self.realized.name,
            steps: &self.candidate.steps,
            verdict: &self.verdict,
            message_count: self.message_count(),
            messages: &self.realized.messages,
            actions: &self.trace,
            connections,
            images: &self.images,
            memory: show_memory.then(|| {
                self.space
                    .strands
                    .iter()
                    .filter(|s| s.classifier == Classifier::Memory)
                    .collect()
            }),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CompositionRecord<'a> {
    pub index: usize,
    pub name: &'a str,
    pub steps: &'a [Step],
    pub verdict: &'a Verdict,
    pub message_count: usize,
    pub messages: &'a [Message],
    pub actions: &'a [Action],
    pub connections: Vec<ConnectionReport>,
    pub images: &'a [ConnectionImage],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory: Option<Vec<&'a KStrand>>,
}

#[derive(Debug, Clone)]
struct Tracked {
    origin: Side,
    kind: ConnectionKind,
    pre_source: usize,
    post_source: usize,
    pre: Term,
    post: Term,
}

/// Per-pair data shared by all candidates.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    p1: &'a Protocol,
    p2: &'a Protocol,
    xi1: SecurityProperty,
    xi2: SecurityProperty,
    senders1: Vec<NodeRef>,
    tracked: Vec<Tracked>,
}

fn sender_nodes(p: &Protocol) -> Vec<NodeRef> {
    message_nodes(p).into_iter().map(|(s, _)| s).collect()
}

fn track(origin: Side, xi: &SecurityProperty, senders: &[NodeRef], out: &mut Vec<Tracked>) {
    let source = |n: NodeRef| senders.iter().position(|s| *s == n);
    for c in &xi.connections {
        if let (Some(pre_source), Some(post_source)) = (source(c.pre.node), source(c.post.node)) {
            out.push(Tracked {
                origin,
                kind: c.kind,
                pre_source,
                post_source,
                pre: c.pre.term.clone(),
                post: c.post.term.clone(),
            });
        }
    }
}

fn mentions(xi: &SecurityProperty, t: &Term) -> bool {
    xi.connections.iter().any(|c| &c.pre.term == t || &c.post.term == t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    First(usize),
    Second(usize),
    Both(usize, usize),
}

impl Origin {
    fn has(self, side: Side) -> bool {
        matches!(
            (self, side),
            (Origin::First(_) | Origin::Both(..), Side::First) | (Origin::Second(_) | Origin::Both(..), Side::Second)
        )
    }
}

struct Work {
    pending: [Vec<Term>; 2],
    out: Vec<(Message, Origin)>,
    tracked: Vec<Tracked>,
}

impl Work {
    fn rewrite(&mut self, side: Side, from: &Term, to: &Term) -> Result<(), ComposeError> {
        check_cycle(from, to)?;
        let slot = match side {
            Side::First => 0,
            Side::Second => 1,
        };
        for t in &mut self.pending[slot] {
            *t = t.replace(from, to);
        }
        for (m, o) in &mut self.out {
            if o.has(side) {
                m.payload = m.payload.replace(from, to);
            }
        }
        for t in self.tracked.iter_mut().filter(|t| t.origin == side) {
            t.pre = t.pre.replace(from, to);
            t.post = t.post.replace(from, to);
        }
        Ok(())
    }
}

impl<'a> Prepared<'a> {
    pub fn new(p1: &'a Protocol, p2: &'a Protocol) -> Self {
        let xi1 = security_property(&to_strand_space(p1));
        let xi2 = security_property(&to_strand_space(p2));
        let senders1 = sender_nodes(p1);
        let senders2 = sender_nodes(p2);
        let mut tracked = Vec::new();
        track(Side::First, &xi1, &senders1, &mut tracked);
        track(Side::Second, &xi2, &senders2, &mut tracked);
        Prepared {
            p1,
            p2,
            xi1,
            xi2,
            senders1,
            tracked,
        }
    }

    pub fn compose(
        &self,
        index: usize,
        candidate: &GeneratedCandidate,
        options: &ComposeOptions,
    ) -> Result<CompositionResult, ComposeError> {
        let (p1, p2) = (self.p1, self.p2);
        let mut work = Work {
            pending: [
                p1.messages.iter().map(|m| m.payload.clone()).collect(),
                p2.messages.iter().map(|m| m.payload.clone()).collect(),
            ],
            out: Vec::with_capacity(candidate.steps.len()),
            tracked: self.tracked.clone(),
        };
        let mut trace = Vec::new();
        let mut failure = None;

        for &step in &candidate.steps {
            let (m1, m2) = step_messages(step, p1, p2)?;
            match (step, m1, m2) {
                (Step::Take1(i), Some(m), _) => {
                    let msg = Message::new(m.sender.clone(), m.receiver.clone(), work.pending[0][i].clone());
                    work.out.push((msg, Origin::First(i)));
                }
                (Step::Take2(j), _, Some(m)) => {
                    let msg = Message::new(m.sender.clone(), m.receiver.clone(), work.pending[1][j].clone());
                    work.out.push((msg, Origin::Second(j)));
                }
                (Step::Concat(i, j), Some(m), Some(_)) => {
                    let t1 = work.pending[0][i].clone();
                    let t2 = work.pending[1][j].clone();
                    let c = compose_terms(&t1, &t2, &self.xi1, self.senders1[i], options.embed);
                    let mut propagated = false;
                    let mut rewrites = Vec::new();
                    if c.rewrites_first() && mentions(&self.xi1, &t1) {
                        rewrites.push((Side::First, t1.clone()));
                    }
                    if c.rewrites_second() && mentions(&self.xi2, &t2) {
                        rewrites.push((Side::Second, t2.clone()));
                    }
                    for (side, from) in rewrites {
                        if let Err(e) = work.rewrite(side, &from, &c.term) {
                            failure.get_or_insert(e.to_string());
                        }
                        propagated = true;
                    }
                    trace.push(Action {
                        step,
                        branch: c.branch,
                        first: t1,
                        second: t2,
                        result: c.term.clone(),
                        propagated,
                    });
                    let msg = Message::new(m.sender.clone(), m.receiver.clone(), c.term);
                    work.out.push((msg, Origin::Both(i, j)));
                }
                _ => unreachable!("step_messages returns the messages a step takes"),
            }
        }

        let mut realized = merge_headers(p1, p2, format!("{}_{}_{}", p1.name, p2.name, index))?;
        let mut position = [vec![0; p1.messages.len()], vec![0; p2.messages.len()]];
        for (k, (m, o)) in work.out.iter().enumerate() {
            match *o {
                Origin::First(i) => position[0][i] = k + 1,
                Origin::Second(j) => position[1][j] = k + 1,
                Origin::Both(i, j) => {
                    position[0][i] = k + 1;
                    position[1][j] = k + 1;
                }
            }
            realized.messages.push(m.clone());
        }

        let unified = to_strand_space(&realized);
        let property = security_property(&unified);
        let space = with_memory(&unified)?;
        let images = self.images(&work.tracked, &position, &realized, &property);

        let verdict = match failure {
            Some(reason) => Verdict::Rejected(reason),
            None => match first_unconstructable(&space, &realized) {
                Some(reason) => Verdict::Rejected(reason),
                None => Verdict::Accepted,
            },
        };
        Ok(CompositionResult {
            index,
            candidate: candidate.clone(),
            realized,
            unified,
            space,
            verdict,
            property,
            trace,
            images,
        })
    }

    fn images(
        &self,
        tracked: &[Tracked],
        position: &[Vec<usize>; 2],
        realized: &Protocol,
        property: &SecurityProperty,
    ) -> Vec<ConnectionImage> {
        let senders = sender_nodes(realized);
        let message_of = |n: NodeRef| senders.iter().position(|s| *s == n).map(|k| k + 1);
        let extracted: BTreeSet<(ConnectionKind, Option<usize>, &Term, Option<usize>, &Term)> = property
            .connections
            .iter()
            .map(|c| (c.kind, message_of(c.pre.node), &c.pre.term, message_of(c.post.node), &c.post.term))
            .collect();
        tracked
            .iter()
            .map(|t| {
                let slot = match t.origin {
                    Side::First => 0,
                    Side::Second => 1,
                };
                let pre_message = position[slot][t.pre_source];
                let post_message = position[slot][t.post_source];
                let present =
                    extracted.contains(&(t.kind, Some(pre_message), &t.pre, Some(post_message), &t.post));
                ConnectionImage {
                    origin: t.origin,
                    kind: t.kind,
                    pre_message,
                    pre_term: t.pre.clone(),
                    post_message,
                    post_term: t.post.clone(),
                    present,
                }
            })
            .collect()
    }
}

/// Checks every positive node of every participant strand against the
/// strand's knowledge and the memory built from strictly earlier receptions.
fn first_unconstructable(space: &KStrandSpace, realized: &Protocol) -> Option<String> {
    for (sid, s) in space.strands.iter().enumerate() {
        if s.classifier != Classifier::Participant {
            continue;
        }
        let key = memory_key(&s.participant);
        for (i, e) in s.trace.iter().enumerate() {
            if e.sign != Sign::Plus {
                continue;
            }
            let known = knowledge_term(&s.trace, i);
            let memory = if known.is_empty() { Term::Empty } else { mk(known, &key) };
            if !constructable(&e.term, &s.knowledge, &memory, &realized.keypairs) {
                return Some(format!(
                    "{} cannot construct {}",
                    space.coord(NodeRef::new(sid, i + 1)),
                    e.term
                ));
            }
        }
    }
    None
}

/// Compose a single candidate of `p1` and `p2`.
pub fn compose_candidate(
    index: usize,
    candidate: &GeneratedCandidate,
    p1: &Protocol,
    p2: &Protocol,
    options: &ComposeOptions,
) -> Result<CompositionResult, ComposeError> {
    Prepared::new(p1, p2).compose(index, candidate, options)
}

/// Accepted result with the fewest messages; ties go to the smaller step
/// sequence.
pub fn select_min_messages(results: &[CompositionResult]) -> Result<&CompositionResult, ComposeError> {
    results
        .iter()
        .filter(|r| r.is_accepted())
        .min_by(|a, b| {
            (a.message_count(), &a.candidate.steps).cmp(&(b.message_count(), &b.candidate.steps))
        })
        .ok_or(ComposeError::NoAccepted)
}

pub fn select_first(results: &[CompositionResult]) -> Result<&CompositionResult, ComposeError> {
    results.iter().find(|r| r.is_accepted()).ok_or(ComposeError::NoAccepted)
}

#[derive(Debug, Clone)]
pub struct ComposeSummary {
    /// Inputs after conflict renaming.
    pub p1: Protocol,
    pub p2: Protocol,
    pub renamings: Vec<Renaming>,
    pub generated: u128,
    pub filtered: usize,
    /// Results in candidate order.
    pub results: Vec<CompositionResult>,
    /// Position in `results` of the selected candidate.
    pub selected: Option<usize>,
}

impl ComposeSummary {
    pub fn accepted(&self) -> impl Iterator<Item = &CompositionResult> {
        self.results.iter().filter(|r| r.is_accepted())
    }

    pub fn selected(&self) -> Option<&CompositionResult> {
        self.selected.map(|i| &self.results[i])
    }
}

/// Rename conflicts, generate, filter and compose every surviving candidate.
pub fn compose_all(p1: &Protocol, p2: &Protocol, options: &ComposeOptions) -> Result<ComposeSummary, ComposeError> {
    let (p1, p2, renamings) = rename_conflicts(p1, p2);
    let generated = count_generated(p1.messages.len(), p2.messages.len());
    let survivors: Vec<(usize, GeneratedCandidate)> = generate(&p1, &p2)
        .enumerate()
        .filter(|(_, c)| endpoints_compatible(c, &p1, &p2))
        .map(|(i, c)| (i + 1, c))
        .collect();
    let prepared = Prepared::new(&p1, &p2);
    let run = || -> Result<Vec<CompositionResult>, ComposeError> {
        survivors
            .par_iter()
            .map(|(i, c)| prepared.compose(*i, c, options))
            .collect()
    };
    let results = if options.jobs == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| ComposeError::Pool(e.to_string()))?
            .install(run)?
    };
    let chosen = match options.select {
        SelectStrategy::MinMessages => select_min_messages(&results).ok(),
        SelectStrategy::First => select_first(&results).ok(),
    };
    let selected = chosen.map(|c| results.iter().position(|r| r.index == c.index).expect("selected from results"));
    let filtered = survivors.len();
    Ok(ComposeSummary {
        p1,
        p2,
        renamings,
        generated,
        filtered,
        results,
        selected,
    })
}
