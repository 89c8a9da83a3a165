//! End-to-end acceptance suite. Prints one line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use spc::composer::{compose_all, ComposeOptions};
use spc::connections::{complete_connections, ConnectionKind};
use spc::generator::{count_generated, filter_endpoints, generate, Candidates};
use spc::independence::{check_message_independence, check_secrecy_independence, rename_conflicts};
use spc::memory::{constructable, gen_memory_strands, MemoryLink};
use spc::strand::{to_strand_space, Classifier, KStrand, Sign};
use spc::term::{FuncName, Term};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sample<S: Strategy>(runner: &mut TestRunner, s: &S) -> S::Value {
    s.new_tree(runner).expect("strategy yields a value").current()
}

fn generation_count() -> Outcome {
    let (w, y) = spc::corpus::pair();
    let start = Instant::now();
    let n = generate(&w, &y).count();
    let took = start.elapsed();
    ensure(n == 1683, || format!("generated {n}"))?;
    ensure(count_generated(5, 5) == 1683, || "count_generated(5, 5) != 1683".into())?;
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("1683 candidates in {took:?}"))
}

fn endpoint_filter() -> Outcome {
    let (w, y) = spc::corpus::pair();
    let n = filter_endpoints(generate(&w, &y), &w, &y).count();
    ensure(n == 408, || format!("{n} survive"))?;
    Ok("408 survive".into())
}

fn connection_inventory() -> Outcome {
    let (w, y) = spc::corpus::pair();
    let cw = complete_connections(&to_strand_space(&w));
    let cy = complete_connections(&to_strand_space(&y));
    ensure(cw.len() == 1, || format!("Woo-Lam has {} complete connections", cw.len()))?;
    ensure(cy.is_empty(), || format!("Yahalom has {} complete connections", cy.len()))?;
    let c = cw.iter().next().unwrap();
    ensure(c.pre.term.to_string() == "{Nb}sk(Kas)", || format!("inner term {}", c.pre.term))?;
    Ok(format!("Woo-Lam 1 ({} |->c {}), Yahalom 0", c.pre.term, c.post.term))
}

fn independence_workflow() -> Outcome {
    let (w, y) = spc::corpus::pair();
    let before = check_secrecy_independence(&w, &y);
    ensure(!before.is_empty(), || "no violation before renaming".into())?;
    ensure(before.iter().all(|v| v.secret.to_string() == "Nb"), || {
        format!("unexpected secrets: {before:?}")
    })?;
    let (w2, y2, report) = rename_conflicts(&w, &y);
    let pairs: Vec<_> = report.iter().map(|r| (r.from.as_str(), r.to.as_str())).collect();
    ensure(pairs == [("Nb", "Nb'")], || format!("renamings {pairs:?}"))?;
    let after = check_secrecy_independence(&w2, &y2);
    ensure(after.is_empty(), || format!("{} violations after renaming", after.len()))?;
    Ok(format!("{} Nb violation(s), clean after Nb -> Nb'", before.len()))
}

fn connection_preservation() -> Outcome {
    let (w, y) = spc::corpus::pair();
    let start = Instant::now();
    let summary = compose_all(&w, &y, &ComposeOptions::default()).map_err(|e| e.to_string())?;
    let mut accepted = 0;
    for r in summary.accepted() {
        accepted += 1;
        let images: Vec<_> = r
            .images
            .iter()
            .filter(|i| i.kind == ConnectionKind::Complete && i.origin == spc::composer::Side::First)
            .collect();
        ensure(images.len() == 1, || format!("{}: {} tracked complete images", r.realized.name, images.len()))?;
        let img = images[0];
        ensure(img.present, || format!("{}: image of the Woo-Lam connection is missing", r.realized.name))?;
        ensure(Term::Atom(spc::term::Atom::nonce("Nb")).is_subterm_of(&img.pre_term), || {
            format!("{}: image {} lost Nb", r.realized.name, img.pre_term)
        })?;
        ensure(r.connections_preserved(), || format!("{}: some connection image is missing", r.realized.name))?;
        let clashes = check_message_independence(&r.realized);
        ensure(clashes.is_empty(), || format!("{}: {}", r.realized.name, clashes[0]))?;
    }
    let took = start.elapsed();
    ensure(accepted > 0, || "nothing accepted".into())?;
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!("{accepted} accepted candidates checked in {took:?}"))
}

fn count_oracle() -> Outcome {
    for m in 0..=6 {
        for n in 0..=6 {
            let brute = all_paths(m, n).len() as u128;
            let emitted = Candidates::new(m, n, (String::new(), String::new())).count() as u128;
            let counted = count_generated(m, n);
            ensure(brute == counted && emitted == counted, || {
                format!("{m}x{n}: brute {brute}, emitted {emitted}, counted {counted}")
            })?;
            if m == 0 || n == 0 {
                ensure(counted == 1, || format!("boundary {m}x{n} = {counted}"))?;
            } else {
                let rec = count_generated(m - 1, n) + count_generated(m, n - 1) + count_generated(m - 1, n - 1);
                ensure(counted == rec, || format!("recurrence fails at {m}x{n}"))?;
            }
        }
    }
    ensure(count_generated(2, 2) == 13 && count_generated(1, 1) == 3, || "small anchors".into())?;
    Ok("m, n <= 6 agree; D(1,1) = 3, D(2,2) = 13".into())
}

fn subterm_oracle() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let outer_s = arb_any_term(5);
    let inner_s = arb_any_term(3);
    let (mut yes, mut no) = (0, 0);
    for i in 0..1000 {
        let outer = sample(&mut runner, &outer_s);
        let trees = subtrees(&outer);
        let inner = if i % 2 == 0 {
            let k = sample(&mut runner, &(0..trees.len()));
            trees[k].clone()
        } else {
            sample(&mut runner, &inner_s)
        };
        ensure(outer.depth() <= 6 && inner.depth() <= 6, || "depth bound".into())?;
        let expected = trees.contains(&inner);
        ensure(inner.is_subterm_of(&outer) == expected, || format!("{inner} in {outer}: expected {expected}"))?;
        if expected {
            yes += 1;
        } else {
            no += 1;
        }
    }
    Ok(format!("1000 pairs agree ({yes} contained, {no} not)"))
}

fn derivability_oracle() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let knowledge_s = prop::collection::vec(arb_term(2), 0..=5);
    let target_s = arb_term(3);
    let memory_s = prop_oneof![3 => Just(Term::Empty), 1 => arb_term(2)];
    let (mut yes, mut no) = (0, 0);
    for i in 0..500 {
        let knowledge = sample(&mut runner, &knowledge_s);
        let memory = sample(&mut runner, &memory_s);
        let pool: Vec<Term> = knowledge.iter().chain([&memory]).flat_map(subtrees).collect();
        let target = match (i % 3, pool.is_empty()) {
            (1, false) => pool[sample(&mut runner, &(0..pool.len()))].clone(),
            (2, false) => {
                let a = pool[sample(&mut runner, &(0..pool.len()))].clone();
                let b = pool[sample(&mut runner, &(0..pool.len()))].clone();
                if sample(&mut runner, &any::<bool>()) {
                    Term::pair(a, b)
                } else {
                    Term::enc(a, FuncName::Sk, b)
                }
            }
            _ => sample(&mut runner, &target_s),
        };
        if target.depth() > 4 {
            continue;
        }
        let set: BTreeSet<Term> = knowledge.iter().cloned().collect();
        let got = constructable(&target, &set, &memory, &keypairs());
        let expected = dy_derivable_bounded(&target, &knowledge, &memory, &keypairs(), 64);
        ensure(got == expected, || {
            let ks: Vec<_> = knowledge.iter().map(|t| t.to_string()).collect();
            format!("target {target}, knowledge [{}], memory {memory}: got {got}", ks.join("; "))
        })?;
        if got {
            yes += 1;
        } else {
            no += 1;
        }
    }
    ensure(yes + no >= 450, || format!("only {} instances within the depth bound", yes + no))?;
    Ok(format!("{} instances agree ({yes} derivable, {no} not)", yes + no))
}

fn memory_shape(s: &KStrand) -> Result<(), String> {
    let receptions = s.trace.iter().filter(|e| e.sign == Sign::Minus).count();
    let pair = gen_memory_strands(s).map_err(|e| e.to_string())?;
    ensure(pair.participant.len() == s.len() + 2 * receptions, || "participant length".into())?;
    ensure(pair.memory.len() == 2 * receptions, || "memory length".into())?;
    ensure(pair.memory.classifier == Classifier::Memory, || "memory classifier".into())?;
    ensure(pair.links.len() == 2 * receptions, || "link count".into())?;
    for link in &pair.links {
        let (from, to) = match *link {
            MemoryLink::Store(p, m) => (&pair.participant.trace[p - 1], &pair.memory.trace[m - 1]),
            MemoryLink::Recall(m, p) => (&pair.memory.trace[m - 1], &pair.participant.trace[p - 1]),
        };
        ensure(from.term == to.term, || format!("payload mismatch {} / {}", from.term, to.term))?;
        ensure(from.sign == Sign::Plus && to.sign == Sign::Minus, || "signs not opposite".into())?;
        ensure(from.term.contains_func(FuncName::Mk), || "link is not mk traffic".into())?;
    }
    Ok(())
}

fn algorithm1_shape() -> Outcome {
    let (w, y) = spc::corpus::pair();
    let mut checked = 0;
    for p in [&w, &y] {
        for s in to_strand_space(p).strands {
            memory_shape(&s).map_err(|e| format!("{} {}: {e}", p.name, s.participant))?;
            checked += 1;
        }
    }
    let mut runner = TestRunner::deterministic();
    let strategy = arb_strand();
    for _ in 0..200 {
        let s = sample(&mut runner, &strategy);
        memory_shape(&s).map_err(|e| format!("random strand: {e}"))?;
    }
    Ok(format!("{checked} corpus strands and 200 random strands"))
}

fn min_messages() -> Outcome {
    let (w, y) = spc::corpus::pair();
    let summary = compose_all(&w, &y, &ComposeOptions::default()).map_err(|e| e.to_string())?;
    let selected = summary.selected().ok_or("nothing selected")?;
    let total = w.messages.len() + y.messages.len();
    let oracle = total - max_compatible_matching(&w, &y);
    let fewest = summary.accepted().map(|r| r.message_count()).min().unwrap_or(usize::MAX);
    ensure(selected.is_accepted(), || "selected result is not accepted".into())?;
    ensure(selected.message_count() == fewest, || "selection is not minimal".into())?;
    ensure(selected.message_count() == oracle && oracle == 7, || {
        format!("selected {}, oracle {oracle}", selected.message_count())
    })?;
    Ok(format!("{} has {} messages", selected.realized.name, selected.message_count()))
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let corpus = corpus_dir();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (k, jobs) in ["1", "4"].iter().enumerate() {
        let out = tmp.path().join(format!("run{k}"));
        let o = Command::new(env!("CARGO_BIN_EXE_spc"))
            .arg("compose")
            .arg(corpus.join("woo_lam_pi3.spc"))
            .arg(corpus.join("lowe_yahalom.spc"))
            .arg(&out)
            .args(["--jobs", jobs, "--show-memory"])
            .env_remove("SPC_COLOR")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        runs.push((o.stdout, tree(&out)));
    }
    ensure(runs[0] == runs[1], || "outputs differ".into())?;
    Ok(format!("{} files identical across runs", runs[0].1.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("generation count", generation_count),
        ("endpoint filter", endpoint_filter),
        ("connection inventory", connection_inventory),
        ("independence workflow", independence_workflow),
        ("connection preservation", connection_preservation),
        ("count oracle", count_oracle),
        ("subterm oracle", subterm_oracle),
        ("derivability oracle", derivability_oracle),
        ("memory strand shape", algorithm1_shape),
        ("min-messages selection", min_messages),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
