//! Golden-corpus driver: discovers `*.cap` programs with `*.expect`
//! sidecars and checks each against its expectation.
//!
//! Sidecar format, one directive per line (`#` starts a comment):
//!
//! ```text
//! ok                      the program must check clean
//! value <display>         expected Display of main's result
//! trace-sha256 <hex>      digest of the runtime trace
//! input <line>            scripted stdin line (repeatable, in order)
//! E_SOMECODE <line>       expected diagnostic, in source order
//! ```
//!
//! A sidecar is either `ok` (optionally with `value`/`trace-sha256`/`input`)
//! or a non-empty ordered list of diagnostic expectations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::diag::Code;
use crate::interp;
use crate::pipeline::{self, DriverConfig};

#[derive(Debug)]
pub struct CaseResult {
    pub path: PathBuf,
    pub passed: bool,
    pub details: String,
}

#[derive(Debug, Default)]
struct Expect {
    ok: bool,
    value: Option<String>,
    digest: Option<String>,
    input: Vec<String>,
    diags: Vec<(Code, u32)>,
}

fn parse_expect(src: &str) -> Result<Expect, String> {
    let mut e = Expect::default();
    for (i, line) in src.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (head, rest) = line.split_once(' ').unwrap_or((line, ""));
        match head {
            "ok" => e.ok = true,
            "value" => e.value = Some(rest.to_string()),
            "trace-sha256" => e.digest = Some(rest.to_string()),
            "input" => e.input.push(rest.to_string()),
            code => {
                let Some(c) = Code::parse(code) else {
                    return Err(format!("line {}: unknown directive `{head}`", i + 1));
                };
                let ln: u32 = rest
                    .trim()
                    .parse()
                    .map_err(|_| format!("line {}: `{code}` needs a line number", i + 1))?;
                e.diags.push((c, ln));
            }
        }
    }
    if !e.ok && e.diags.is_empty() {
        return Err("sidecar must contain `ok` or at least one diagnostic".into());
    }
    if e.ok && !e.diags.is_empty() {
        return Err("sidecar mixes `ok` with diagnostic expectations".into());
    }
    Ok(e)
}

/// SHA-256 over the trace lines, newline-terminated each.
pub fn trace_digest(trace: &[String]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for line in trace {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    let bytes = h.finalize();
    let mut out = String::with_capacity(64);
    for b in bytes {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn run_case(path: &Path, scala_compat: bool) -> CaseResult {
    let fail = |details: String| CaseResult { path: path.to_path_buf(), passed: false, details };
    let src = match std::fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) => return fail(format!("cannot read: {e}")),
    };
    let sidecar = path.with_extension("expect");
    let expect = match std::fs::read_to_string(&sidecar) {
        Ok(s) => match parse_expect(&s) {
            Ok(e) => e,
            Err(m) => return fail(format!("bad sidecar: {m}")),
        },
        Err(e) => return fail(format!("missing sidecar {}: {e}", sidecar.display())),
    };

    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("case.cap");
    let cfg = DriverConfig { scala_compat, input: expect.input.clone(), ..Default::default() };
    let checked = pipeline::check_source(name, &src, &cfg);

    if !expect.ok {
        let diags = match checked {
            Ok(_) => return fail("expected diagnostics, but the program checked clean".into()),
            Err(d) => d,
        };
        let got: Vec<(Code, u32)> = diags.iter().map(|d| (d.code, d.span.start_line)).collect();
        if got != expect.diags {
            return fail(format!("expected {:?}, got {:?}", expect.diags, got));
        }
        return CaseResult { path: path.to_path_buf(), passed: true, details: String::new() };
    }

    let prog = match checked {
        Ok(p) => p,
        Err(d) => {
            let lines: Vec<String> = d.iter().map(|d| format!("{}: {}", d.code, d.message)).collect();
            return fail(format!("expected clean check, got: {}", lines.join("; ")));
        }
    };
    let has_main = prog.def("main").is_some_and(|d| d.body.is_some() || d.extern_prim.is_some());
    if !has_main {
        if expect.value.is_some() || expect.digest.is_some() {
            return fail("sidecar expects a run, but the program has no `main`".into());
        }
        return CaseResult { path: path.to_path_buf(), passed: true, details: String::new() };
    }
    let out = match interp::run_program_with(&prog, None, expect.input) {
        Ok(o) => o,
        Err(e) => return fail(format!("runtime error[{}]: {}", e.code(), e.message())),
    };
    if let Some(want) = &expect.value {
        let got = format!("{}", out.value);
        if &got != want {
            return fail(format!("expected value {want}, got {got}"));
        }
    }
    if let Some(want) = &expect.digest {
        let got = trace_digest(&out.trace);
        if &got != want {
            return fail(format!(
                "trace digest mismatch: expected {want}, got {got}\ntrace:\n  {}",
                out.trace.join("\n  ")
            ));
        }
    }
    CaseResult { path: path.to_path_buf(), passed: true, details: String::new() }
}

/// Run every `*.cap` under `dir` (recursively), in path order.
pub fn run_dir(dir: &Path, scala_compat: bool) -> Vec<CaseResult> {
    let mut cases = Vec::new();
    collect(dir, &mut cases);
    cases.sort();
    cases.iter().map(|p| run_case(p, scala_compat)).collect()
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(rd) = std::fs::read_dir(dir) else { return };
    for entry in rd.flatten() {
        let p = entry.path();
        if p.is_dir() {
            collect(&p, out);
        } else if p.extension().is_some_and(|e| e == "cap") {
            out.push(p);
        }
    }
}
