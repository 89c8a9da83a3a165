//! Strategies and independent reference implementations shared by the
//! integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use spc::generator::Step;
use spc::strand::{Classifier, KStrand, Protocol, SignedTerm};
use spc::term::{Atom, FuncName, Term};

pub fn roles() -> Vec<Atom> {
    vec![Atom::role("A"), Atom::role("B"), Atom::role("S")]
}

pub fn nonces() -> Vec<Atom> {
    vec![Atom::nonce("N1"), Atom::nonce("N2"), Atom::nonce("N3")]
}

pub fn keys() -> Vec<Atom> {
    vec![Atom::key("K1"), Atom::key("K2"), Atom::key("Kp"), Atom::key("Kq")]
}

/// `Kp`/`Kq` form an asymmetric pair.
pub fn keypairs() -> Vec<(Atom, Atom)> {
    vec![(Atom::key("Kp"), Atom::key("Kq"))]
}

pub fn atom_pool() -> Vec<Atom> {
    let mut v = roles();
    v.extend(nonces());
    v.extend(keys());
    v
}

pub fn arb_atom() -> impl Strategy<Value = Atom> {
    prop::sample::select(atom_pool())
}

pub fn arb_key_atom() -> impl Strategy<Value = Atom> {
    prop::sample::select(keys())
}

/// Functions usable in parsed input.
pub fn arb_func() -> impl Strategy<Value = FuncName> {
    prop::sample::select(vec![FuncName::Sk, FuncName::Pk, FuncName::Pvk, FuncName::H])
}

/// Terms of depth at most `levels + 1` with atomic keys and no `Empty`.
pub fn arb_term(levels: u32) -> BoxedStrategy<Term> {
    arb_atom()
        .prop_map(Term::Atom)
        .prop_recursive(levels, 48, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(l, r)| Term::pair(l, r)),
                (inner, arb_func(), arb_key_atom()).prop_map(|(b, f, k)| Term::enc(b, f, Term::Atom(k))),
            ]
        })
        .boxed()
}

/// Terms of depth at most `levels + 1` where keys may be compound and
/// `Empty` may appear anywhere.
pub fn arb_any_term(levels: u32) -> BoxedStrategy<Term> {
    prop_oneof![
        6 => arb_atom().prop_map(Term::Atom),
        1 => Just(Term::Empty),
    ]
    .prop_recursive(levels, 64, 3, |inner| {
        let func = prop::sample::select(FuncName::ALL.to_vec());
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(l, r)| Term::pair(l, r)),
            (inner.clone(), func, inner).prop_map(|(b, f, k)| Term::enc(b, f, k)),
        ]
    })
    .boxed()
}

/// Every subtree occurrence of `t`, by explicit traversal.
pub fn subtrees(t: &Term) -> Vec<Term> {
    let mut out = Vec::new();
    let mut stack = vec![t.clone()];
    while let Some(x) = stack.pop() {
        match &x {
            Term::Pair(l, r) => {
                stack.push((**l).clone());
                stack.push((**r).clone());
            }
            Term::Enc { body, key, .. } => {
                stack.push((**body).clone());
                stack.push((**key).clone());
            }
            Term::Empty | Term::Atom(_) => {}
        }
        out.push(x);
    }
    out
}

fn partner(keypairs: &[(Atom, Atom)], k: &Term) -> Option<Term> {
    let a = match k {
        Term::Atom(a) => a,
        _ => return None,
    };
    for (p, q) in keypairs {
        if p == a {
            return Some(Term::Atom(q.clone()));
        }
        if q == a {
            return Some(Term::Atom(p.clone()));
        }
    }
    None
}

fn opening_key(keypairs: &[(Atom, Atom)], func: FuncName, key: &Term) -> Option<Term> {
    match func {
        FuncName::Sk | FuncName::Mk => Some(key.clone()),
        FuncName::H => None,
        FuncName::Pk | FuncName::Pvk => partner(keypairs, key),
    }
}

/// Breadth-first Dolev-Yao saturation restricted to the subterms of the
/// inputs, one rule layer per round, at most `max_rounds` rounds.
pub fn dy_derivable_bounded(
    target: &Term,
    knowledge: &[Term],
    memory: &Term,
    keypairs: &[(Atom, Atom)],
    max_rounds: usize,
) -> bool {
    let mut universe: BTreeSet<Term> = BTreeSet::new();
    let mut known: BTreeSet<Term> = BTreeSet::new();
    known.insert(Term::Empty);
    for k in knowledge.iter().chain([memory]) {
        universe.extend(subtrees(k));
        known.insert(k.clone());
    }
    universe.extend(subtrees(target));
    for _ in 0..max_rounds {
        let mut layer = Vec::new();
        for t in &universe {
            if known.contains(t) {
                continue;
            }
            let composed = match t {
                Term::Pair(l, r) => known.contains(&**l) && known.contains(&**r),
                Term::Enc { body, key, .. } => known.contains(&**body) && known.contains(&**key),
                _ => false,
            };
            let projected = known.iter().any(|k| match k {
                Term::Pair(l, r) => &**l == t || &**r == t,
                _ => false,
            });
            let opened = known.iter().any(|k| match k {
                Term::Enc { body, func, key } => {
                    &**body == t && opening_key(keypairs, *func, key).is_some_and(|inv| known.contains(&inv))
                }
                _ => false,
            });
            if composed || projected || opened {
                layer.push(t.clone());
            }
        }
        if layer.is_empty() {
            break;
        }
        known.extend(layer);
    }
    known.contains(target)
}

pub fn dy_derivable(target: &Term, knowledge: &[Term], memory: &Term, keypairs: &[(Atom, Atom)]) -> bool {
    dy_derivable_bounded(target, knowledge, memory, keypairs, 256)
}

/// Every lattice path from `(0,0)` to `(m,n)`, by plain recursion.
pub fn all_paths(m: usize, n: usize) -> Vec<Vec<Step>> {
    fn go(i: usize, j: usize, m: usize, n: usize, cur: &mut Vec<Step>, out: &mut Vec<Vec<Step>>) {
        if i == m && j == n {
            out.push(cur.clone());
            return;
        }
        if i < m {
            cur.push(Step::Take1(i));
            go(i + 1, j, m, n, cur, out);
            cur.pop();
        }
        if j < n {
            cur.push(Step::Take2(j));
            go(i, j + 1, m, n, cur, out);
            cur.pop();
        }
        if i < m && j < n {
            cur.push(Step::Concat(i, j));
            go(i + 1, j + 1, m, n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, 0, m, n, &mut Vec::new(), &mut out);
    out
}

/// Largest set of endpoint-compatible message pairs that is strictly
/// increasing in both protocols, by trying every subset.
pub fn max_compatible_matching(p1: &Protocol, p2: &Protocol) -> usize {
    let pairs: Vec<(usize, usize)> = (0..p1.messages.len())
        .flat_map(|i| (0..p2.messages.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| {
            p1.messages[i].sender == p2.messages[j].sender && p1.messages[i].receiver == p2.messages[j].receiver
        })
        .collect();
    assert!(pairs.len() < 24, "subset search too large");
    let mut best = 0;
    for mask in 0u32..(1 << pairs.len()) {
        let chosen: Vec<_> = (0..pairs.len()).filter(|b| mask & (1 << b) != 0).map(|b| pairs[b]).collect();
        let ok = chosen.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1);
        if ok {
            best = best.max(chosen.len());
        }
    }
    best
}

/// Random participant strand over the atom pool.
pub fn arb_strand() -> impl Strategy<Value = KStrand> {
    (
        prop::sample::select(roles()),
        prop::collection::vec((any::<bool>(), arb_term(2)), 0..8),
        prop::collection::btree_set(arb_atom().prop_map(Term::Atom), 0..4),
    )
        .prop_map(|(role, events, knowledge)| {
            let mut s = KStrand::new(role, Classifier::Participant, knowledge);
            s.trace = events
                .into_iter()
                .map(|(send, t)| if send { SignedTerm::send(t) } else { SignedTerm::recv(t) })
                .collect();
            s
        })
}

/// Random well-formed protocol description over the atom pool.
pub fn arb_protocol_text() -> impl Strategy<Value = String> {
    let message = (0usize..3, 1usize..3, arb_term(2));
    (
        prop::collection::vec(message, 1..6),
        prop::collection::vec(prop::collection::btree_set(arb_atom(), 0..4), 3),
        prop::collection::btree_set(0usize..3, 0..2),
    )
        .prop_map(|(msgs, know, secret_picks)| {
            let roles = roles();
            let mut text = String::from("protocol Rand\nroles A, B, S\nnonces N1, N2, N3\nkeys K1, K2, Kp, Kq\n");
            for (r, ks) in roles.iter().zip(&know) {
                if ks.is_empty() {
                    continue;
                }
                let names: Vec<_> = ks.iter().map(|a| a.name().to_string()).collect();
                text.push_str(&format!("knows {}: {}\n", r.name(), names.join(", ")));
            }
            let payloads: Vec<Term> = msgs.iter().map(|(_, _, t)| t.clone()).collect();
            let used: BTreeSet<Atom> = payloads.iter().flat_map(|t| t.atoms()).collect();
            let used: Vec<_> = used.into_iter().collect();
            let secrets: BTreeSet<String> = secret_picks
                .iter()
                .filter_map(|k| used.get(*k % used.len().max(1)).map(|a| a.name().to_string()))
                .collect();
            if !secrets.is_empty() {
                text.push_str(&format!("secrets: {}\n", secrets.into_iter().collect::<Vec<_>>().join(", ")));
            }
            for (i, (s, off, t)) in msgs.iter().enumerate() {
                let r = (s + off) % 3;
                text.push_str(&format!("{}. {} -> {} : {}\n", i + 1, roles[*s].name(), roles[r].name(), t));
            }
            text
        })
}

/// The bundled files, read from disk.
pub fn corpus_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}
