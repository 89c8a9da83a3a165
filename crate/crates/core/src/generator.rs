//! Parallel composition candidates.
//!
//! A candidate interleaves the message lists of two protocols, keeping each
//! list's order, and may fuse one message of each into a single message.
//! Candidates are exactly the lattice paths from `(0, 0)` to `(m, n)` with
//! unit steps right (`Take1`), down (`Take2`) and diagonal (`Concat`), so
//! their number is the Delannoy number `D(m, n)`.

use std::fmt;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::strand::{Message, Protocol};
use crate::term::Term;

/// One step of a candidate. Indices are 0-based message positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Take1(usize),
    Take2(usize),
    Concat(usize, usize),
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Take1(i) => write!(f, "P1.{}", i + 1),
            Step::Take2(j) => write!(f, "P2.{}", j + 1),
            Step::Concat(i, j) => write!(f, "P1.{}+P2.{}", i + 1, j + 1),
        }
    }
}

/// JSON form uses 1-based message numbers.
impl Serialize for Step {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(None)?;
        match self {
            Step::Take1(i) => {
                map.serialize_entry("kind", "take1")?;
                map.serialize_entry("p1", &(i + 1))?;
            }
            Step::Take2(j) => {
                map.serialize_entry("kind", "take2")?;
                map.serialize_entry("p2", &(j + 1))?;
            }
            Step::Concat(i, j) => {
                map.serialize_entry("kind", "concat")?;
                map.serialize_entry("p1", &(i + 1))?;
                map.serialize_entry("p2", &(j + 1))?;
            }
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GeneratedCandidate {
    pub steps: Vec<Step>,
    pub provenance: (String, String),
}

impl GeneratedCandidate {
    pub fn concat_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Concat(..))).count()
    }

    pub fn message_count(&self) -> usize {
        self.steps.len()
    }
}

impl fmt::Display for GeneratedCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, s) in self.steps.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            s.fmt(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("step {step} fuses messages with different endpoints ({p1} vs {p2})")]
    IncompatibleEndpoints { step: String, p1: String, p2: String },
    #[error("atom `{name}` has sort {first} in one protocol and {second} in the other")]
    SortConflict {
        name: String,
        first: crate::term::Sort,
        second: crate::term::Sort,
    },
    #[error("step {0} is out of range for the protocols")]
    StepOutOfRange(String),
}

/// Lazy, lexicographic (`Take1 < Take2 < Concat`) enumeration of every
/// lattice path over an `m × n` grid.
#[derive(Debug, Clone)]
pub struct Candidates {
    m: usize,
    n: usize,
    provenance: (String, String),
    path: Vec<Step>,
    state: IterState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IterState {
    Fresh,
    Running,
    Done,
}

fn position(path: &[Step]) -> (usize, usize) {
    path.iter().fold((0, 0), |(i, j), s| match s {
        Step::Take1(_) => (i + 1, j),
        Step::Take2(_) => (i, j + 1),
        Step::Concat(..) => (i + 1, j + 1),
    })
}

impl Candidates {
    pub fn new(m: usize, n: usize, provenance: (String, String)) -> Self {
        Candidates {
            m,
            n,
            provenance,
            path: Vec::with_capacity(m + n),
            state: IterState::Fresh,
        }
    }

    /// Smallest step available at `(i, j)` that is greater than `after`.
    fn next_option(&self, (i, j): (usize, usize), after: Option<Step>) -> Option<Step> {
        let options = [
            (i < self.m).then_some(Step::Take1(i)),
            (j < self.n).then_some(Step::Take2(j)),
            (i < self.m && j < self.n).then_some(Step::Concat(i, j)),
        ];
        options
            .into_iter()
            .flatten()
            .find(|s| after.is_none_or(|a| rank(*s) > rank(a)))
    }

    fn complete_greedily(&mut self) {
        loop {
            let pos = position(&self.path);
            match self.next_option(pos, None) {
                Some(s) => self.path.push(s),
                None => return,
            }
        }
    }
}

fn rank(s: Step) -> u8 {
    match s {
        Step::Take1(_) => 0,
        Step::Take2(_) => 1,
        Step::Concat(..) => 2,
    }
}

impl Iterator for Candidates {
    type Item = GeneratedCandidate;

    fn next(&mut self) -> Option<GeneratedCandidate> {
        match self.state {
            IterState::Done => return None,
            IterState::Fresh => {
                self.complete_greedily();
                self.state = IterState::Running;
            }
            IterState::Running => loop {
                let Some(last) = self.path.pop() else {
                    self.state = IterState::Done;
                    return None;
                };
                let pos = position(&self.path);
                if let Some(s) = self.next_option(pos, Some(last)) {
                    self.path.push(s);
                    self.complete_greedily();
                    break;
                }
            },
        }
        Some(GeneratedCandidate {
            steps: self.path.clone(),
            provenance: self.provenance.clone(),
        })
    }
}

pub fn generate(p1: &Protocol, p2: &Protocol) -> Candidates {
    Candidates::new(
        p1.messages.len(),
        p2.messages.len(),
        (p1.name.clone(), p2.name.clone()),
    )
}

/// `D(m, n)`: the number of candidates [`generate`] emits.
///
/// Panics if the count does not fit in a `u128`.
pub fn count_generated(m: usize, n: usize) -> u128 {
    let mut row = vec![1u128; n + 1];
    for _ in 0..m {
        let mut diag = row[0];
        for j in 1..=n {
            let up = row[j];
            row[j] = up
                .checked_add(row[j - 1])
                .and_then(|v| v.checked_add(diag))
                .expect("candidate count overflows u128");
            diag = up;
        }
    }
    row[n]
}

/// Every fused pair has the same sender and the same receiver.
pub fn endpoints_compatible(c: &GeneratedCandidate, p1: &Protocol, p2: &Protocol) -> bool {
    c.steps.iter().all(|s| match s {
        Step::Concat(i, j) => match (p1.messages.get(*i), p2.messages.get(*j)) {
            (Some(a), Some(b)) => a.endpoints() == b.endpoints(),
            _ => false,
        },
        _ => true,
    })
}

pub fn filter_endpoints<'a, I>(
    candidates: I,
    p1: &'a Protocol,
    p2: &'a Protocol,
) -> impl Iterator<Item = GeneratedCandidate> + 'a
where
    I: IntoIterator<Item = GeneratedCandidate>,
    I::IntoIter: 'a,
{
    candidates
        .into_iter()
        .filter(move |c| endpoints_compatible(c, p1, p2))
}

/// Declarations, knowledge and secrets of both protocols, with no messages.
/// Roles keep first-seen order; knowledge of a shared role is the union.
pub fn merge_headers(p1: &Protocol, p2: &Protocol, name: String) -> Result<Protocol, GenerateError> {
    let mut out = p1.clone();
    out.name = name;
    out.messages.clear();
    for (n, s) in &p2.sorts {
        match out.sorts.get(n) {
            Some(prev) if prev != s => {
                return Err(GenerateError::SortConflict {
                    name: n.clone(),
                    first: *prev,
                    second: *s,
                })
            }
            _ => {
                out.sorts.insert(n.clone(), *s);
            }
        }
    }
    for r in &p2.roles {
        if !out.roles.contains(r) {
            out.roles.push(r.clone());
        }
    }
    for kp in &p2.keypairs {
        if !out.keypairs.contains(kp) {
            out.keypairs.push(kp.clone());
        }
    }
    for (r, ks) in &p2.knowledge {
        out.knowledge.entry(r.clone()).or_default().extend(ks.iter().cloned());
    }
    out.secrets.extend(p2.secrets.iter().cloned());
    Ok(out)
}

pub(crate) fn step_messages<'p>(
    step: Step,
    p1: &'p Protocol,
    p2: &'p Protocol,
) -> Result<(Option<&'p Message>, Option<&'p Message>), GenerateError> {
    let get1 = |i: usize| p1.messages.get(i).ok_or_else(|| GenerateError::StepOutOfRange(step.to_string()));
    let get2 = |j: usize| p2.messages.get(j).ok_or_else(|| GenerateError::StepOutOfRange(step.to_string()));
    Ok(match step {
        Step::Take1(i) => (Some(get1(i)?), None),
        Step::Take2(j) => (None, Some(get2(j)?)),
        Step::Concat(i, j) => {
            let (a, b) = (get1(i)?, get2(j)?);
            if a.endpoints() != b.endpoints() {
                return Err(GenerateError::IncompatibleEndpoints {
                    step: step.to_string(),
                    p1: format!("{} -> {}", a.sender, a.receiver),
                    p2: format!("{} -> {}", b.sender, b.receiver),
                });
            }
            (Some(a), Some(b))
        }
    })
}

/// The protocol a candidate denotes, with fused payloads simply paired.
pub fn realize(c: &GeneratedCandidate, p1: &Protocol, p2: &Protocol) -> Result<Protocol, GenerateError> {
    let mut out = merge_headers(p1, p2, format!("{}_{}", p1.name, p2.name))?;
    for step in &c.steps {
        let msg = match step_messages(*step, p1, p2)? {
            (Some(a), Some(b)) => Message::new(
                a.sender.clone(),
                a.receiver.clone(),
                Term::pair(a.payload.clone(), b.payload.clone()),
            ),
            (Some(m), None) | (None, Some(m)) => m.clone(),
            (None, None) => unreachable!("every step takes at least one message"),
        };
        out.messages.push(msg);
    }
    Ok(out)
}

/// Serialises a candidate with its realised message list.
pub struct CandidateListing<'a> {
    pub index: usize,
    pub candidate: &'a GeneratedCandidate,
    pub messages: Vec<Message>,
}

impl Serialize for CandidateListing<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(3))?;
        map.serialize_entry("index", &self.index)?;
        map.serialize_entry("steps", &self.candidate.steps)?;
        map.serialize_entry("messages", &self.messages)?;
        map.end()
    }
}
