//! Command-line front end.
//!
//! Exit codes: 0 clean, 1 violations or nothing accepted, 2 usage, I/O or
//! parse errors in inputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::composer::{compose_all, ComposeError, ComposeOptions, ComposeSummary, SelectStrategy};
use crate::connections::{security_property, ConnectionKind, ConnectionReport};
use crate::generator::{count_generated, endpoints_compatible, generate, realize, CandidateListing};
use crate::independence::{check_secrecy_independence, check_structural_independence, rename_conflicts};
use crate::parser::{parse_document, serialize_protocol, Diagnostic, Severity};
use crate::strand::{to_strand_space, Message, Protocol};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "spc", version, about = "Parallel composition of security protocols")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindFilter {
    All,
    Partial,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Select {
    MinMessages,
    First,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a protocol description.
    Parse { file: PathBuf },
    /// Check secrecy and structural independence of two protocols.
    Check {
        file1: PathBuf,
        file2: PathBuf,
        /// Rename conflicting atoms in the second protocol and check again.
        #[arg(long)]
        auto_rename: bool,
    },
    /// List the term connections of a protocol.
    Connections {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = KindFilter::All)]
        kind: KindFilter,
    },
    /// Count (and optionally list) composition candidates.
    Generate {
        file1: PathBuf,
        file2: PathBuf,
        /// Print the candidates that pass the endpoint filter.
        #[arg(long)]
        list: bool,
        /// List at most this many candidates.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Run the full composition pipeline and write accepted protocols.
    Compose {
        file1: PathBuf,
        file2: PathBuf,
        outdir: PathBuf,
        /// Pair terms under different keys instead of embedding them.
        #[arg(long)]
        no_embed: bool,
        /// Include memory strands in the JSON records.
        #[arg(long)]
        show_memory: bool,
        #[arg(long, value_enum, default_value_t = Select::MinMessages)]
        select: Select,
        /// Worker threads (0: one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

struct Out<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    color: bool,
}

impl Out<'_> {
    fn print(&mut self, s: &str) {
        let _ = self.out.write_all(s.as_bytes());
    }

    fn json<T: Serialize>(&mut self, v: &T) {
        let text = serde_json::to_string_pretty(v).expect("report serialises");
        let _ = writeln!(self.out, "{text}");
    }

    fn error(&mut self, s: &str) {
        let _ = writeln!(self.err, "{}", self.paint(s, "31"));
    }

    fn paint(&self, s: &str, code: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{s}\x1b[0m")
        } else {
            s.to_string()
        }
    }
}

fn color_enabled() -> bool {
    matches!(
        std::env::var("SPC_COLOR").as_deref(),
        Ok("1" | "always" | "true" | "yes")
    )
}

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let mut io = Out {
        out,
        err,
        color: color_enabled(),
    };
    let code = execute(&config, &mut io);
    let _ = io.out.flush();
    code
}

fn execute(config: &RunConfig, io: &mut Out<'_>) -> i32 {
    let fmt = config.format;
    match &config.command {
        Command::Parse { file } => cmd_parse(file, fmt, io),
        Command::Check {
            file1,
            file2,
            auto_rename,
        } => cmd_check(file1, file2, *auto_rename, fmt, io),
        Command::Connections { file, kind } => cmd_connections(file, *kind, fmt, io),
        Command::Generate {
            file1,
            file2,
            list,
            limit,
        } => cmd_generate(file1, file2, *list, *limit, fmt, io),
        Command::Compose {
            file1,
            file2,
            outdir,
            no_embed,
            show_memory,
            select,
            jobs,
        } => {
            let options = ComposeOptions {
                embed: !no_embed,
                jobs: *jobs,
                select: match select {
                    Select::MinMessages => SelectStrategy::MinMessages,
                    Select::First => SelectStrategy::First,
                },
            };
            cmd_compose(file1, file2, outdir, &options, *show_memory, fmt, io)
        }
    }
}

#[derive(Serialize)]
struct DiagnosticJson {
    line: usize,
    column: usize,
    severity: &'static str,
    message: String,
}

impl From<&Diagnostic> for DiagnosticJson {
    fn from(d: &Diagnostic) -> Self {
        DiagnosticJson {
            line: d.line,
            column: d.column,
            severity: match d.severity {
                Severity::Warning => "warning",
                Severity::Error => "error",
            },
            message: d.kind.to_string(),
        }
    }
}

enum Loaded {
    Ok(Protocol, Vec<Diagnostic>),
    Io(String),
    Invalid(Vec<Diagnostic>),
}

fn load(path: &Path) -> Loaded {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return Loaded::Io(format!("{}: {e}", path.display())),
    };
    match parse_document(&text) {
        Ok(doc) => Loaded::Ok(doc.protocol, doc.warnings),
        Err(e) => Loaded::Invalid(e.diagnostics),
    }
}

/// Loads an input for commands other than `parse`; failures are usage errors.
fn load_input(path: &Path, io: &mut Out<'_>) -> Result<Protocol, i32> {
    match load(path) {
        Loaded::Ok(p, warnings) => {
            for w in warnings {
                let _ = writeln!(io.err, "{}:{w}", path.display());
            }
            Ok(p)
        }
        Loaded::Io(msg) => {
            io.error(&msg);
            Err(EXIT_USAGE)
        }
        Loaded::Invalid(ds) => {
            for d in ds {
                io.error(&format!("{}:{d}", path.display()));
            }
            Err(EXIT_USAGE)
        }
    }
}

fn message_lines(messages: &[Message]) -> String {
    let mut s = String::new();
    for (i, m) in messages.iter().enumerate() {
        let _ = writeln!(s, "  {}. {} -> {} : {}", i + 1, m.sender, m.receiver, m.payload);
    }
    s
}

fn cmd_parse(file: &Path, fmt: Format, io: &mut Out<'_>) -> i32 {
    match load(file) {
        Loaded::Io(msg) => {
            io.error(&msg);
            EXIT_USAGE
        }
        Loaded::Invalid(ds) => {
            match fmt {
                Format::Json => {
                    let ds: Vec<DiagnosticJson> = ds.iter().map(Into::into).collect();
                    io.json(&json!({ "file": file.display().to_string(), "errors": ds }));
                }
                Format::Text => {
                    for d in ds {
                        io.error(&format!("{}:{d}", file.display()));
                    }
                }
            }
            EXIT_VIOLATION
        }
        Loaded::Ok(p, warnings) => {
            match fmt {
                Format::Json => {
                    let ws: Vec<DiagnosticJson> = warnings.iter().map(Into::into).collect();
                    io.json(&json!({ "protocol": p, "warnings": ws }));
                }
                Format::Text => {
                    for w in &warnings {
                        let _ = writeln!(io.err, "{}:{w}", file.display());
                    }
                    let roles: Vec<_> = p.roles.iter().map(|r| r.name()).collect();
                    let mut s = String::new();
                    let _ = writeln!(s, "protocol {}", p.name);
                    let _ = writeln!(s, "roles: {}", roles.join(", "));
                    let _ = writeln!(s, "messages: {}", p.messages.len());
                    s.push_str(&message_lines(&p.messages));
                    io.print(&s);
                }
            }
            EXIT_OK
        }
    }
}

fn cmd_check(file1: &Path, file2: &Path, auto_rename: bool, fmt: Format, io: &mut Out<'_>) -> i32 {
    let p1 = match load_input(file1, io) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let p2 = match load_input(file2, io) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let (p1, p2, renamings) = if auto_rename {
        rename_conflicts(&p1, &p2)
    } else {
        (p1, p2, Vec::new())
    };
    let secrecy = check_secrecy_independence(&p1, &p2);
    let structural = check_structural_independence(&p1, &p2);
    let clean = secrecy.is_empty() && structural.is_empty();
    match fmt {
        Format::Json => io.json(&json!({
            "renamings": renamings,
            "secrecy": secrecy,
            "structural": structural,
            "clean": clean,
        })),
        Format::Text => {
            let mut s = String::new();
            for r in &renamings {
                let _ = writeln!(s, "renamed {r}");
            }
            let _ = writeln!(s, "secrecy: {} violation(s)", secrecy.len());
            for v in &secrecy {
                let _ = writeln!(s, "  {v}");
            }
            let _ = writeln!(s, "structural: {} clash(es)", structural.len());
            for c in &structural {
                let _ = writeln!(s, "  {c}");
            }
            let verdict = if clean {
                io.paint("result: independent", "32")
            } else {
                io.paint("result: not independent", "31")
            };
            let _ = writeln!(s, "{verdict}");
            io.print(&s);
        }
    }
    if clean {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

fn cmd_connections(file: &Path, kind: KindFilter, fmt: Format, io: &mut Out<'_>) -> i32 {
    let p = match load_input(file, io) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let space = to_strand_space(&p);
    let property = security_property(&space);
    let reports = |k: ConnectionKind| -> Vec<ConnectionReport> {
        let mut v: Vec<_> = property
            .connections
            .iter()
            .filter(|c| c.kind == k)
            .map(|c| ConnectionReport::new(&space, c))
            .collect();
        v.sort();
        v
    };
    let wanted: Vec<ConnectionKind> = match kind {
        KindFilter::All => vec![ConnectionKind::Partial, ConnectionKind::Complete],
        KindFilter::Partial => vec![ConnectionKind::Partial],
        KindFilter::Complete => vec![ConnectionKind::Complete],
    };
    match fmt {
        Format::Json => {
            let mut obj = serde_json::Map::new();
            obj.insert("protocol".into(), json!(p.name));
            for k in &wanted {
                let key = match k {
                    ConnectionKind::Partial => "partial",
                    ConnectionKind::Complete => "complete",
                };
                obj.insert(key.into(), json!(reports(*k)));
            }
            io.json(&obj);
        }
        Format::Text => {
            let mut s = String::new();
            for k in &wanted {
                let rs = reports(*k);
                let label = match k {
                    ConnectionKind::Partial => "partial",
                    ConnectionKind::Complete => "complete",
                };
                let _ = writeln!(s, "{label}: {}", rs.len());
                for r in rs {
                    let _ = writeln!(s, "  {r}");
                }
            }
            io.print(&s);
        }
    }
    EXIT_OK
}

fn cmd_generate(
    file1: &Path,
    file2: &Path,
    list: bool,
    limit: Option<usize>,
    fmt: Format,
    io: &mut Out<'_>,
) -> i32 {
    let p1 = match load_input(file1, io) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let p2 = match load_input(file2, io) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let generated = count_generated(p1.messages.len(), p2.messages.len());
    let survivors = generate(&p1, &p2)
        .enumerate()
        .filter(|(_, c)| endpoints_compatible(c, &p1, &p2));
    let mut filtered = 0usize;
    let mut listed = Vec::new();
    for (i, c) in survivors {
        filtered += 1;
        if list && limit.is_none_or(|l| listed.len() < l) {
            listed.push((i + 1, c));
        }
    }
    let mut listings = Vec::with_capacity(listed.len());
    for (index, c) in &listed {
        match realize(c, &p1, &p2) {
            Ok(r) => listings.push(CandidateListing {
                index: *index,
                candidate: c,
                messages: r.messages,
            }),
            Err(e) => {
                io.error(&e.to_string());
                return EXIT_USAGE;
            }
        }
    }
    match fmt {
        Format::Json => {
            let mut obj = serde_json::Map::new();
            obj.insert("generated".into(), json!(u64::try_from(generated).ok()));
            obj.insert("filtered".into(), json!(filtered));
            if list {
                obj.insert("candidates".into(), json!(listings));
            }
            io.json(&obj);
        }
        Format::Text => {
            let mut s = format!("generated: {generated}, filtered: {filtered}\n");
            for l in &listings {
                let _ = writeln!(s, "#{} {}", l.index, l.candidate);
                s.push_str(&message_lines(&l.messages));
            }
            io.print(&s);
        }
    }
    EXIT_OK
}

fn write_outputs(dir: &Path, summary: &ComposeSummary, show_memory: bool) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for r in summary.accepted() {
        fs::write(dir.join(format!("{}.spc", r.realized.name)), serialize_protocol(&r.realized))?;
        let mut text = serde_json::to_string_pretty(&r.record(show_memory)).expect("record serialises");
        text.push('\n');
        fs::write(dir.join(format!("{}.json", r.realized.name)), text)?;
    }
    let mut text = serde_json::to_string_pretty(&summary_json(summary)).expect("summary serialises");
    text.push('\n');
    fs::write(dir.join("summary.json"), text)
}

fn summary_json(s: &ComposeSummary) -> serde_json::Value {
    let accepted: Vec<_> = s.accepted().map(|r| r.realized.name.clone()).collect();
    let rejected: Vec<_> = s
        .results
        .iter()
        .filter(|r| !r.is_accepted())
        .map(|r| json!({ "index": r.index, "verdict": r.verdict }))
        .collect();
    json!({
        "protocols": [s.p1.name, s.p2.name],
        "renamings": s.renamings,
        "generated": u64::try_from(s.generated).ok(),
        "filtered": s.filtered,
        "accepted": accepted,
        "rejected": rejected,
        "selected": s.selected().map(|r| json!({
            "name": r.realized.name,
            "index": r.index,
            "message_count": r.message_count(),
            "steps": r.candidate.steps,
            "messages": r.realized.messages,
        })),
    })
}

fn cmd_compose(
    file1: &Path,
    file2: &Path,
    outdir: &Path,
    options: &ComposeOptions,
    show_memory: bool,
    fmt: Format,
    io: &mut Out<'_>,
) -> i32 {
    let p1 = match load_input(file1, io) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let p2 = match load_input(file2, io) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let summary = match compose_all(&p1, &p2, options) {
        Ok(s) => s,
        Err(e @ ComposeError::Generate(_)) => {
            io.error(&e.to_string());
            return EXIT_USAGE;
        }
        Err(e) => {
            io.error(&e.to_string());
            return EXIT_VIOLATION;
        }
    };
    if let Err(e) = write_outputs(outdir, &summary, show_memory) {
        io.error(&format!("{}: {e}", outdir.display()));
        return EXIT_USAGE;
    }
    match fmt {
        Format::Json => io.json(&summary_json(&summary)),
        Format::Text => {
            let mut s = String::new();
            for r in &summary.renamings {
                let _ = writeln!(s, "renamed {r}");
            }
            let accepted = summary.accepted().count();
            let _ = writeln!(s, "generated: {}", summary.generated);
            let _ = writeln!(s, "filtered: {}", summary.filtered);
            let _ = writeln!(s, "accepted: {accepted}");
            let _ = writeln!(s, "rejected: {}", summary.results.len() - accepted);
            if let Some(r) = summary.selected() {
                let how = match options.select {
                    SelectStrategy::MinMessages => "min-messages",
                    SelectStrategy::First => "first",
                };
                let head = format!(
                    "selected ({how}): {} with {} messages",
                    r.realized.name,
                    r.message_count()
                );
                let _ = writeln!(s, "{}", io.paint(&head, "32"));
                s.push_str(&message_lines(&r.realized.messages));
            }
            io.print(&s);
        }
    }
    if summary.selected.is_some() {
        EXIT_OK
    } else {
        io.error("no candidate was accepted");
        EXIT_VIOLATION
    }
}
