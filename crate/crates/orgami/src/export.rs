//! Writes a `TraceBundle` to a directory under stable file names. Every
//! writer is a pure function of the bundle, so re-exporting overwrites the
//! same files with the same bytes.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use orgami_core::petri::{EdgeLabel, NetExpr, NetPost, PetriNet, StateGraph, Token};
use orgami_core::{Payload, Value};
use serde::Serialize;
use thiserror::Error;

use crate::run::{Artifacts, Report, TraceBundle};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    /// `.json` documents and `.jsonl` streams.
    Json,
    Csv,
    Dot,
    /// Edge lists, PNML, OPB and rule listings.
    Text,
}

impl Format {
    pub const ALL: [Format; 4] = [Format::Json, Format::Csv, Format::Dot, Format::Text];
}

/// Writes every format; returns the files written in order.
pub fn export(bundle: &TraceBundle, dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    let mut out = Vec::new();
    for f in Format::ALL {
        out.extend(export_format(bundle, f, dir)?);
    }
    Ok(out)
}

pub fn export_format(
    bundle: &TraceBundle,
    format: Format,
    dir: &Path,
) -> Result<Vec<PathBuf>, ExportError> {
    let files = render(bundle, format)?;
    std::fs::create_dir_all(dir).map_err(|source| ExportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|source| ExportError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// File names and contents of one format, without touching the disk.
pub fn render(
    bundle: &TraceBundle,
    format: Format,
) -> Result<Vec<(&'static str, Vec<u8>)>, ExportError> {
    let mut files: Vec<(&'static str, Vec<u8>)> = Vec::new();
    match format {
        Format::Json => {
            files.push(("meta.json", pretty(&bundle.meta)));
            files.push(("report.json", pretty(&bundle.report)));
            files.push(("verdicts.json", pretty(&bundle.verdicts)));
            files.push(("flows.jsonl", flows_jsonl(bundle)));
            match (&bundle.report, &bundle.artifacts) {
                (_, Artifacts::Petri { net, .. }) => files.push(("net.json", pretty(net))),
                (Report::Deploy(d), _) => files.push(("mapping.json", pretty(&d.mapping))),
                (_, Artifacts::Anc { library }) => files.push(("behaviors.json", pretty(library))),
                (Report::Voting(v), _) => {
                    files.push(("vote_outcome.json", pretty(&VoteFile::from(v))))
                }
                _ => {}
            }
        }
        Format::Csv => {
            files.push(("events.csv", events_csv(bundle)?));
            files.push(("messages.csv", messages_csv(bundle)?));
            match &bundle.report {
                Report::Anc(a) => files.push(("anc_curve.csv", curve_csv(a)?)),
                Report::Voting(v) if !v.benchmark.is_empty() => {
                    files.push(("vote_benchmark.csv", benchmark_csv(v)?))
                }
                _ => {}
            }
        }
        Format::Dot => {
            if let Artifacts::Petri { net, graph } = &bundle.artifacts {
                files.push(("statespace.dot", statespace_dot(net, graph).into_bytes()));
            }
        }
        Format::Text => {
            files.push(("topology.txt", bundle.topology.to_edge_list().into_bytes()));
            match (&bundle.report, &bundle.artifacts) {
                (_, Artifacts::Petri { net, .. }) => {
                    files.push(("net.pnml", pnml(net).into_bytes()))
                }
                (_, Artifacts::Deploy { opb }) => {
                    files.push(("instance.opb", opb.clone().into_bytes()))
                }
                (Report::Anc(a), _) => {
                    let mut text = a.rules.join("\n");
                    if !text.is_empty() {
                        text.push('\n');
                    }
                    files.push(("rules.txt", text.into_bytes()));
                }
                _ => {}
            }
        }
    }
    Ok(files)
}

fn pretty<T: Serialize + ?Sized>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("bundle parts serialize");
    out.push(b'\n');
    out
}

#[derive(Serialize)]
struct VoteFile<'a> {
    winner: Option<usize>,
    iterations: Vec<usize>,
    outcome: &'a Option<orgami_core::voting::VoteOutcome>,
    unresolved: &'a Option<orgami_core::voting::Unresolved>,
    compiled: &'a Option<orgami_core::voting::CompiledOutcome>,
}

impl<'a> From<&'a crate::run::VoteReport> for VoteFile<'a> {
    fn from(v: &'a crate::run::VoteReport) -> Self {
        VoteFile {
            winner: v.winner,
            iterations: v
                .outcome
                .as_ref()
                .map(|o| o.iterations())
                .unwrap_or_default(),
            outcome: &v.outcome,
            unresolved: &v.unresolved,
            compiled: &v.compiled,
        }
    }
}

/// One flow per line.
fn flows_jsonl(bundle: &TraceBundle) -> Vec<u8> {
    let mut out = Vec::new();
    for f in &bundle.flows {
        serde_json::to_writer(&mut out, f).expect("flows serialize");
        out.push(b'\n');
    }
    out
}

fn payload_text(p: &Option<Payload>) -> String {
    match p {
        None => String::new(),
        Some(Payload::Value(Value::Text(t))) => t.clone(),
        Some(Payload::Value(v)) => v.to_string(),
        Some(Payload::Rule(r)) => r.to_string(),
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, ExportError> {
    w.into_inner()
        .map_err(|e| ExportError::Csv(e.into_error().into()))
}

fn events_csv(bundle: &TraceBundle) -> Result<Vec<u8>, ExportError> {
    let mut w = csv_writer();
    w.write_record([
        "time",
        "cell",
        "kind",
        "name",
        "operation",
        "value",
        "version",
    ])?;
    for e in &bundle.events {
        w.write_record([
            e.time.to_string(),
            e.address.cell.to_string(),
            e.address.kind.to_string(),
            e.address.name.to_string(),
            e.operation.to_string(),
            payload_text(&e.value),
            e.version.to_string(),
        ])?;
    }
    finish(w)
}

fn messages_csv(bundle: &TraceBundle) -> Result<Vec<u8>, ExportError> {
    let mut w = csv_writer();
    w.write_record(["send_time", "src", "dst", "hops", "delivered_time"])?;
    for m in &bundle.messages {
        w.write_record([
            m.send_time.to_string(),
            m.src.to_string(),
            m.dst.to_string(),
            m.hops.to_string(),
            m.delivered
                .map_or_else(|| "DROPPED".to_string(), |t| t.to_string()),
        ])?;
    }
    finish(w)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn curve_csv(a: &crate::run::AncReport) -> Result<Vec<u8>, ExportError> {
    let mut w = csv_writer();
    w.write_record([
        "step",
        "presentation",
        "signal",
        "behavior",
        "library_size",
        "mse",
        "learned",
    ])?;
    for p in &a.curve {
        w.write_record([
            p.step.to_string(),
            p.presentation.to_string(),
            p.signal.clone(),
            opt(p.behavior),
            p.library_size.to_string(),
            p.mse.map(|m| format!("{m:e}")).unwrap_or_default(),
            opt(p.learned),
        ])?;
    }
    finish(w)
}

fn benchmark_csv(v: &crate::run::VoteReport) -> Result<Vec<u8>, ExportError> {
    let mut w = csv_writer();
    w.write_record(["topology", "seed", "iterations", "winner"])?;
    for r in &v.benchmark {
        w.write_record([
            r.topology.clone(),
            r.seed.to_string(),
            r.iterations.to_string(),
            r.winner.to_string(),
        ])?;
    }
    finish(w)
}

fn token_text(t: &Token) -> String {
    match t {
        Token::Absent => "-".to_string(),
        Token::Value(v) => v.to_string(),
        Token::Agent(id) => format!("T{id}"),
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Reachability graph: one vertex per marking labelled with its tokens,
/// edges labelled with the transition or the driven input place.
pub fn statespace_dot(net: &PetriNet, g: &StateGraph) -> String {
    let mut out = String::from("digraph statespace {\n  node [shape=box, fontname=monospace];\n");
    let quiet: BTreeSet<usize> = g.quiescent().into_iter().collect();
    for (i, m) in g.markings.iter().enumerate() {
        let mut label = format!("s{i}");
        for (p, t) in net.places.iter().zip(&m.tokens) {
            let _ = write!(
                label,
                "\\n{}={}",
                dot_escape(&p.address.to_string()),
                dot_escape(&token_text(t))
            );
        }
        let style = if quiet.contains(&i) {
            ", peripheries=2"
        } else {
            ""
        };
        let _ = writeln!(out, "  s{i} [label=\"{label}\"{style}];");
    }
    for e in &g.edges {
        let label = match e.label {
            EdgeLabel::Transition(t) => format!("t{t}"),
            EdgeLabel::Input(p) => format!("in {}", net.places[p].address),
        };
        let _ = writeln!(
            out,
            "  s{} -> s{} [label=\"{}\"];",
            e.from,
            e.to,
            dot_escape(&label)
        );
    }
    if g.truncated {
        out.push_str("  truncated [shape=plaintext, label=\"exploration truncated\"];\n");
    }
    out.push_str("}\n");
    out
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn read_places(e: &NetExpr, out: &mut BTreeSet<usize>) {
    match e {
        NetExpr::Lit(_) => {}
        NetExpr::Place(p) | NetExpr::Exists(p) => {
            out.insert(*p);
        }
        NetExpr::Unary(_, a) => read_places(a, out),
        NetExpr::Binary(_, a, b) => {
            read_places(a, out);
            read_places(b, out);
        }
        NetExpr::Call(_, args) => args.iter().for_each(|a| read_places(a, out)),
    }
}

/// PNML place/transition net. Each transition consumes and restores the
/// token of its agent-place, reads the places of its guard and payloads,
/// and writes its action targets. Tokens are given as text.
pub fn pnml(net: &PetriNet) -> String {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <pnml xmlns=\"http://www.pnml.org/version-2009/grammar/pnml\">\n  \
         <net id=\"choreography\" type=\"http://www.pnml.org/version-2009/grammar/ptnet\">\n    \
         <page id=\"page0\">\n",
    );
    for p in &net.places {
        let _ = writeln!(
            out,
            "      <place id=\"p{}\"><name><text>{}</text></name><initialMarking><text>{}</text></initialMarking></place>",
            p.id,
            xml_escape(&p.address.to_string()),
            xml_escape(&token_text(&net.initial[p.id])),
        );
    }
    let mut arcs = Vec::new();
    for t in &net.transitions {
        let tpl = &net.templates[t.template];
        let _ = writeln!(
            out,
            "      <transition id=\"t{}\"><name><text>{}</text></name></transition>",
            t.id,
            xml_escape(&format!(
                "{}: {}",
                net.places[t.agent_place].address, tpl.source
            )),
        );
        let mut reads = BTreeSet::new();
        read_places(&tpl.guard, &mut reads);
        let mut writes = BTreeSet::new();
        for a in &tpl.actions {
            writes.insert(a.target);
            if let Some(NetPost::Expr(e)) = &a.post {
                read_places(e, &mut reads);
            }
        }
        reads.insert(t.agent_place);
        writes.insert(t.agent_place);
        for p in reads {
            arcs.push((format!("p{p}"), format!("t{}", t.id)));
        }
        for p in writes {
            arcs.push((format!("t{}", t.id), format!("p{p}")));
        }
    }
    for (i, (src, dst)) in arcs.iter().enumerate() {
        let _ = writeln!(
            out,
            "      <arc id=\"a{i}\" source=\"{src}\" target=\"{dst}\"/>"
        );
    }
    out.push_str("    </page>\n  </net>\n</pnml>\n");
    out
}
