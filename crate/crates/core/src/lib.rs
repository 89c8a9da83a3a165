//! Parallel composition of security protocols over k-strand spaces.
//!
//! Pipeline: parse two protocols, check that their secrets and encrypted
//! terms are independent, enumerate every interleaving with pairwise
//! message fusion, compose fused terms while keeping the term connections
//! each protocol relies on, and accept the candidates in which every
//! participant can still build what it sends.

pub mod cli;
pub mod composer;
pub mod connections;
pub mod corpus;
pub mod generator;
pub mod independence;
pub mod memory;
pub mod parser;
pub mod strand;
pub mod term;

pub use composer::{compose_all, compose_candidate, ComposeOptions, CompositionResult, Verdict};
pub use connections::{complete_connections, partial_connections, security_property, Connection, SecurityProperty};
pub use generator::{count_generated, filter_endpoints, generate, realize, GeneratedCandidate, Step};
pub use independence::{check_secrecy_independence, check_structural_independence, rename_conflicts};
pub use memory::{constructable, gen_memory_strands, with_memory};
pub use parser::{parse_document, parse_protocol, serialize_protocol};
pub use strand::{to_strand_space, KStrand, KStrandSpace, Protocol};
pub use term::{Atom, FuncName, Sort, Term};
