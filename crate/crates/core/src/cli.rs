//! Command-line front end. `run` takes the argument vector and output
//! streams so it can be driven from tests; the binary only forwards to it.
//!
//! Exit status: 0 on success, 1 when the run finished with diagnostics
//! (unresolved IC names, dropped region events, functions lost to inlining),
//! 2 on usage, input or parse errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::backends::BackendKind;
use crate::bench::{bench, BenchOptions};
use crate::callgraph::CallGraph;
use crate::icformat::{emit_native_ic, emit_scorep_filter, InstrumentationConfig, Origin};
use crate::patchrt::{ObjectLayout, RegistryOptions};
use crate::postprocess::{build_report, compensate_inlining, infer_inlined, Compensation, SelectionReport, SymbolTable};
use crate::replay::{patch_report_text, replay, resolve_ic, ReplayOptions};
use crate::selectors::{evaluate, EvalError, NameSet, SelectionSet};
use crate::spec::{parse_spec_file, SelectorPipeline};
use crate::trace::Trace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIAGNOSTICS: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "capi", version, about = "Call-graph based instrumentation selection and replay")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IcFormat {
    Scorep,
    Native,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Generic,
    Profile,
    Regions,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Generic => BackendKind::Generic,
            BackendArg::Profile => BackendKind::Profile,
            BackendArg::Regions => BackendKind::Regions,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a selection spec on a call graph and write the IC.
    Select {
        #[arg(long)]
        cg: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Symbol table of the built binary; enables inlining compensation.
        #[arg(long)]
        symtab: Option<PathBuf>,
        /// Write the IC here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = IcFormat::Scorep)]
        format: IcFormat,
        /// Print selection statistics.
        #[arg(long)]
        stats: bool,
        /// Annotate filter entries with demangled names.
        #[arg(long)]
        demangled: bool,
    },
    /// Register objects, patch per the IC and replay a trace into a backend.
    Replay {
        #[arg(long)]
        objects: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        backend: BackendArg,
        /// IC file; defaults to the file named by CAPI_FILTERING_FILE.
        #[arg(long)]
        ic: Option<PathBuf>,
        /// Dispatch each trace thread concurrently.
        #[arg(long)]
        parallel: bool,
        /// Functions with fewer statements are compiled without sleds.
        #[arg(long, default_value_t = 1)]
        xray_threshold: u64,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        report_format: ReportFormat,
    },
    /// Measure dispatch cost with all sleds NOP versus all patched.
    Bench {
        #[arg(long)]
        objects: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        report_format: ReportFormat,
    },
}

/// Result of the full selection workflow.
#[derive(Debug, Clone)]
pub struct SelectOutcome {
    pub pre: SelectionSet,
    pub compensation: Compensation,
    pub ic: InstrumentationConfig,
    pub report: SelectionReport,
}

/// Evaluates the pipeline, compensates for inlining when a symbol table is
/// given, and builds the IC.
pub fn select(
    graph: &CallGraph,
    pipeline: &SelectorPipeline,
    symbols: Option<&SymbolTable>,
) -> Result<SelectOutcome, EvalError> {
    let start = Instant::now();
    let pre = evaluate(pipeline, graph)?;
    let inlined = symbols.map(|s| infer_inlined(graph, s)).unwrap_or_default();
    let compensation = compensate_inlining(graph, &pre, &inlined);
    let post: NameSet = pre.functions.difference(&compensation.removed).cloned().collect();
    let elapsed = start.elapsed();
    let report = build_report(
        &pre,
        &SelectionSet::new(post, pre.source_instance.clone()),
        &compensation.added,
        elapsed,
        Some(graph),
    );
    let sel = &compensation.selection.functions;
    let ic = InstrumentationConfig {
        include: sel.iter().cloned().collect(),
        origin: sel
            .iter()
            .map(|n| {
                let o = if compensation.added.contains(n) {
                    Origin::Compensation
                } else {
                    Origin::Pipeline
                };
                (n.clone(), o)
            })
            .collect(),
        ..Default::default()
    };
    Ok(SelectOutcome {
        pre,
        compensation,
        ic,
        report,
    })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_ERROR
        }
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, String> {
    match command {
        Command::Select {
            cg,
            spec,
            symtab,
            out: out_path,
            format,
            stats,
            demangled,
        } => {
            let graph = CallGraph::load(&cg).map_err(|e| format!("{}: {e}", cg.display()))?;
            let pipeline = parse_spec_file(&spec).map_err(|e| e.to_string())?;
            let symbols = symtab
                .as_ref()
                .map(|p| SymbolTable::load(p).map_err(|e| format!("{}: {e}", p.display())))
                .transpose()?;
            let outcome = select(&graph, &pipeline, symbols.as_ref()).map_err(|e| e.to_string())?;
            let text = match format {
                IcFormat::Scorep => emit_scorep_filter(&outcome.ic, demangled.then_some(&graph)),
                IcFormat::Native => {
                    let mut s = emit_native_ic(&outcome.ic);
                    s.push('\n');
                    s
                }
            };
            match &out_path {
                Some(p) => write_file(p, &text)?,
                None => write_out(out, &text)?,
            }
            if stats {
                write_out(out, &outcome.report.to_text())?;
            }
            let dropped = &outcome.compensation.dropped;
            if !dropped.is_empty() {
                let names: Vec<&str> = dropped.iter().map(String::as_str).collect();
                let _ = writeln!(err, "warning: no non-inlined caller for: {}", names.join(", "));
                return Ok(EXIT_DIAGNOSTICS);
            }
            Ok(EXIT_OK)
        }
        Command::Replay {
            objects,
            trace,
            backend,
            ic,
            parallel,
            xray_threshold,
            report_format,
        } => {
            let layout = ObjectLayout::load(&objects).map_err(|e| format!("{}: {e}", objects.display()))?;
            let trace = Trace::load(&trace).map_err(|e| e.to_string())?;
            let ic = resolve_ic(ic.as_deref()).map_err(|e| e.to_string())?;
            let options = ReplayOptions {
                backend: backend.into(),
                registry: RegistryOptions { xray_threshold },
                parallel,
            };
            let outcome = replay(&layout, &trace, &ic, options).map_err(|e| e.to_string())?;
            match report_format {
                ReportFormat::Text => {
                    write_out(out, &patch_report_text(&outcome.patch))?;
                    write_out(out, "\n")?;
                    write_out(out, &outcome.report.to_text())?;
                }
                ReportFormat::Json => {
                    write_out(out, &outcome.to_json())?;
                    write_out(out, "\n")?;
                }
            }
            if !outcome.patch.not_found.is_empty() {
                let _ = writeln!(err, "warning: {} IC name(s) could not be resolved", outcome.patch.not_found.len());
            }
            Ok(if outcome.has_diagnostics() {
                EXIT_DIAGNOSTICS
            } else {
                EXIT_OK
            })
        }
        Command::Bench {
            objects,
            trace,
            report_format,
        } => {
            let layout = ObjectLayout::load(&objects).map_err(|e| format!("{}: {e}", objects.display()))?;
            let trace = Trace::load(&trace).map_err(|e| e.to_string())?;
            let result = bench(&layout, &trace, BenchOptions::default()).map_err(|e| e.to_string())?;
            let text = match report_format {
                ReportFormat::Text => result.to_text(),
                ReportFormat::Json => serde_json::to_string(&result).expect("bench result serializes") + "\n",
            };
            write_out(out, &text)?;
            Ok(EXIT_OK)
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), String> {
    out.write_all(text.as_bytes()).map_err(|e| format!("cannot write output: {e}"))
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}
