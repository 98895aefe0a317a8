use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use capc::diag::{self, Code, Diagnostic, RenderMode};
use capc::kernel::KProgram;
use capc::pipeline::{self, DriverConfig};
use capc::{corpus, desugar, kernel, syntax, typer};

#[derive(Parser)]
#[command(name = "capc", version, about = "Checker and interpreter for the Cap language")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Human,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Phase {
    Parse,
    Desugar,
    Anf,
    Types,
}

#[derive(Subcommand)]
enum Cmd {
    /// Type- and effect-check programs without running them
    Check {
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        /// Keep consumed implicit candidates visible during resolution
        #[arg(long)]
        scala_compat: bool,
        /// Print a prose explanation of a diagnostic code
        #[arg(long, value_name = "CODE")]
        explain: Option<String>,
    },
    /// Check a program, then evaluate its `main`
    Run {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        #[arg(long)]
        scala_compat: bool,
        /// Skip flow-sensitive kill tracking (runtime guards still fire)
        #[arg(long)]
        no_effect_check: bool,
        /// File with scripted lines for `readLine`, one per call
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Scheduler seed; evaluation is currently deterministic
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Write the runtime trace as JSON lines to this file
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        step_limit: Option<u64>,
    },
    /// Print an intermediate representation of a program
    Dump {
        file: PathBuf,
        #[arg(long, value_enum)]
        phase: Phase,
        #[arg(long)]
        scala_compat: bool,
    },
    /// Run every `*.cap` in a directory against its `*.expect` sidecar
    Test {
        dir: PathBuf,
        #[arg(long)]
        scala_compat: bool,
    },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Check { files, format, scala_compat, explain } => {
            cmd_check(&files, format, scala_compat, explain.as_deref())
        }
        Cmd::Run { file, format, scala_compat, no_effect_check, input, seed, trace, step_limit } => {
            cmd_run(&file, format, scala_compat, no_effect_check, input, seed, trace, step_limit)
        }
        Cmd::Dump { file, phase, scala_compat } => cmd_dump(&file, phase, scala_compat),
        Cmd::Test { dir, scala_compat } => cmd_test(&dir, scala_compat),
    }
}

fn read_file(path: &Path) -> Result<String, ExitCode> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("capc: cannot read {}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn file_name(path: &Path) -> &str {
    path.file_name().and_then(|s| s.to_str()).unwrap_or("input.cap")
}

fn print_diags(diags: &mut Vec<Diagnostic>, format: Format, src: &str) {
    diag::sort_diags(diags);
    for d in diags {
        // Excerpts only make sense for spans in the file we actually read;
        // prelude diagnostics carry a `<prelude:...>` virtual file.
        let excerpt = if d.span.file.starts_with('<') { None } else { Some(src) };
        print!("{}", render(d, format, excerpt));
    }
}

fn render(d: &Diagnostic, format: Format, src: Option<&str>) -> String {
    match format {
        Format::Human => diag::render(d, RenderMode::Human, src),
        Format::Json => format!("{}\n", diag::render(d, RenderMode::Json, src)),
    }
}

fn cmd_check(
    files: &[PathBuf],
    format: Format,
    scala_compat: bool,
    explain: Option<&str>,
) -> ExitCode {
    if let Some(code) = explain {
        let Some(c) = Code::parse(code) else {
            eprintln!("capc: unknown diagnostic code `{code}`");
            return ExitCode::from(2);
        };
        println!("{c}: {}", c.explain());
        if files.is_empty() {
            return ExitCode::SUCCESS;
        }
    } else if files.is_empty() {
        eprintln!("capc: no input files");
        return ExitCode::from(2);
    }
    let cfg = DriverConfig { scala_compat, ..Default::default() };
    let mut failed = false;
    for path in files {
        let src = match read_file(path) {
            Ok(s) => s,
            Err(e) => return e,
        };
        if let Err(mut diags) = pipeline::check_source(file_name(path), &src, &cfg) {
            print_diags(&mut diags, format, &src);
            failed = true;
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

#[derive(Serialize)]
struct TraceEvent<'a> {
    event: &'a str,
    task: u32,
    resource: Option<&'a str>,
    detail: &'a str,
}

fn trace_json(line: &str) -> String {
    let event = line.split('(').next().unwrap_or(line);
    // First `rN` token in the line, if any, names the resource involved.
    let resource = line
        .split(|c: char| !c.is_ascii_alphanumeric())
        .find(|t| t.len() > 1 && t.starts_with('r') && t[1..].chars().all(|c| c.is_ascii_digit()));
    let ev = TraceEvent { event, task: 0, resource, detail: line };
    serde_json::to_string(&ev).expect("trace event serializes")
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    file: &Path,
    format: Format,
    scala_compat: bool,
    no_effect_check: bool,
    input: Option<PathBuf>,
    seed: Option<u64>,
    trace: Option<PathBuf>,
    step_limit: Option<u64>,
) -> ExitCode {
    // Evaluation is deterministic today; the seed is accepted for
    // command-line stability but has no observable effect.
    let _ = seed;
    let src = match read_file(file) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let script = match input {
        Some(p) => match read_file(&p) {
            Ok(s) => s.lines().map(str::to_string).collect(),
            Err(e) => return e,
        },
        None => Vec::new(),
    };
    let cfg = DriverConfig { scala_compat, no_effect_check, step_limit, input: script, ..Default::default() };
    let outcome = match pipeline::run_source(file_name(file), &src, &cfg) {
        Ok(r) => r,
        Err(mut diags) => {
            print_diags(&mut diags, format, &src);
            return ExitCode::FAILURE;
        }
    };
    match outcome {
        Ok(out) => {
            if let Some(path) = trace {
                let lines: Vec<String> = out.trace.iter().map(|l| trace_json(l)).collect();
                let mut body = lines.join("\n");
                if !body.is_empty() {
                    body.push('\n');
                }
                if let Err(e) = std::fs::write(&path, body) {
                    eprintln!("capc: cannot write {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            match format {
                Format::Human => println!("{}", out.value),
                Format::Json => println!(
                    "{}",
                    serde_json::json!({ "value": out.value.to_string(), "trace": out.trace })
                ),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            match format {
                Format::Human => eprintln!("runtime error[{}]: {}", e.code(), e.message()),
                Format::Json => println!(
                    "{}",
                    serde_json::json!({ "runtimeError": e.code(), "message": e.message() })
                ),
            }
            ExitCode::FAILURE
        }
    }
}

/// Drop prelude declarations so `dump` shows only the user's program.
fn user_slice(k: &KProgram, file: &str) -> KProgram {
    let mut out = k.clone();
    out.defs.retain(|d| &*d.span.file == file);
    out.vals.retain(|v| &*v.span.file == file);
    out
}

fn cmd_dump(file: &Path, phase: Phase, scala_compat: bool) -> ExitCode {
    let src = match read_file(file) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let name = file_name(file);
    let fail = |mut diags: Vec<Diagnostic>| {
        print_diags(&mut diags, Format::Human, &src);
        ExitCode::FAILURE
    };

    if phase == Phase::Parse {
        return match syntax::parse_program(name, &src) {
            Ok(p) => {
                print!("{}", syntax::pretty::print_program(&p));
                ExitCode::SUCCESS
            }
            Err(d) => fail(vec![d]),
        };
    }

    let surface = match pipeline::expand_program(name, &src) {
        Ok(p) => p,
        Err(diags) => return fail(diags),
    };
    let k = match desugar::desugar_program(&surface) {
        Ok(k) => k,
        Err(d) => return fail(vec![d]),
    };
    match phase {
        Phase::Parse => unreachable!(),
        Phase::Desugar => {
            print!("{}", kernel::print_program(&user_slice(&k, name)));
            ExitCode::SUCCESS
        }
        Phase::Anf => {
            let k = capc::anf::anf_program(&k);
            print!("{}", kernel::print_program(&user_slice(&k, name)));
            ExitCode::SUCCESS
        }
        Phase::Types => {
            let k = capc::anf::anf_program(&k);
            let opts = typer::Options { scala_compat, no_effect_check: false };
            let (globals, diags) = typer::check_program(&k, &opts);
            if !diags.is_empty() {
                return fail(diags);
            }
            for d in k.defs.iter().filter(|d| &*d.span.file == name) {
                let t = d.value_type();
                let t = globals.normalize(&t).unwrap_or(t);
                println!("{} : {}", d.name, t);
            }
            ExitCode::SUCCESS
        }
    }
}

fn cmd_test(dir: &Path, scala_compat: bool) -> ExitCode {
    if !dir.is_dir() {
        eprintln!("capc: {} is not a directory", dir.display());
        return ExitCode::from(2);
    }
    let results = corpus::run_dir(dir, scala_compat);
    if results.is_empty() {
        eprintln!("capc: no *.cap files under {}", dir.display());
        return ExitCode::from(2);
    }
    let mut failed = 0usize;
    for r in &results {
        if r.passed {
            println!("ok   {}", r.path.display());
        } else {
            failed += 1;
            println!("FAIL {}", r.path.display());
            for line in r.details.lines() {
                println!("       {line}");
            }
        }
    }
    println!("{} passed, {} failed", results.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
