//! End-to-end driver: prelude expansion → parse → desugar → ANF → check → run.
//!
//! Source files opt into bundled library modules with leading directives:
//!
//! ```text
//! //> use core
//! //> use file
//! ```
//!
//! Each named prelude is parsed under its own virtual file name, so
//! diagnostics in user code keep their original line numbers.

use std::collections::HashSet;
use std::sync::Arc;

use crate::diag::{Code, Diagnostic};
use crate::interp::{self, RtError, RunOutcome};
use crate::kernel::KProgram;
use crate::span::Span;
use crate::syntax::{self, ast};
use crate::typer;

/// Name, modules it depends on, source.
pub const PRELUDES: &[(&str, &[&str], &str)] = &[
    ("core", &[], include_str!("prelude/core.cap")),
    ("file", &[], include_str!("prelude/file.cap")),
    ("filesigma", &["file"], include_str!("prelude/filesigma.cap")),
    ("lock", &[], include_str!("prelude/lock.cap")),
    ("dom", &[], include_str!("prelude/dom.cap")),
    ("chan", &["core"], include_str!("prelude/chan.cap")),
];

#[derive(Debug, Clone, Default)]
pub struct DriverConfig {
    pub scala_compat: bool,
    pub no_effect_check: bool,
    /// Skip the ANF pass (check the desugared program directly).
    pub no_anf: bool,
    pub step_limit: Option<u64>,
    /// Scripted lines for `readLine`.
    pub input: Vec<String>,
}

fn add_prelude(
    name: &str,
    seen: &mut HashSet<&'static str>,
    decls: &mut Vec<ast::Decl>,
) -> Result<(), Diagnostic> {
    let Some((n, deps, psrc)) = PRELUDES.iter().find(|(n, _, _)| *n == name) else {
        return Ok(());
    };
    if !seen.insert(n) {
        return Ok(());
    }
    for d in *deps {
        add_prelude(d, seen, decls)?;
    }
    let p = syntax::parse_program(&format!("<prelude:{n}>"), psrc)?;
    decls.extend(p.decls);
    Ok(())
}

/// Parse `src`, expanding `//> use <name>` directives by prepending the named
/// prelude declarations.
pub fn expand_program(file: &str, src: &str) -> Result<ast::Program, Vec<Diagnostic>> {
    let mut decls = Vec::new();
    let mut seen: HashSet<&'static str> = HashSet::new();
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if !t.starts_with("//>") {
            if t.is_empty() || t.starts_with("//") {
                continue;
            }
            break;
        }
        let Some(name) = t.strip_prefix("//>").map(str::trim).and_then(|d| d.strip_prefix("use "))
        else {
            return Err(vec![Diagnostic::new(
                Code::E_PARSE,
                Span::point(Arc::from(file), i as u32 + 1, 1),
                format!("malformed directive `{t}`; expected `//> use <module>`"),
            )]);
        };
        let name = name.trim();
        if PRELUDES.iter().all(|(n, _, _)| *n != name) {
            return Err(vec![Diagnostic::new(
                Code::E_PARSE,
                Span::point(Arc::from(file), i as u32 + 1, 1),
                format!(
                    "unknown module `{name}`; available: {}",
                    PRELUDES.iter().map(|(n, _, _)| *n).collect::<Vec<_>>().join(", ")
                ),
            )]);
        }
        add_prelude(name, &mut seen, &mut decls).map_err(|d| vec![d])?;
    }
    let user = syntax::parse_program(file, src).map_err(|d| vec![d])?;
    let span = user.span.clone();
    decls.extend(user.decls);
    Ok(ast::Program { decls, span })
}

/// Full front end: expand, desugar, optionally normalize, and type-check.
pub fn check_source(
    file: &str,
    src: &str,
    cfg: &DriverConfig,
) -> Result<KProgram, Vec<Diagnostic>> {
    let surface = expand_program(file, src)?;
    let k = crate::desugar::desugar_program(&surface).map_err(|d| vec![d])?;
    let k = if cfg.no_anf { k } else { crate::anf::anf_program(&k) };
    let opts = typer::Options {
        scala_compat: cfg.scala_compat,
        no_effect_check: cfg.no_effect_check,
    };
    let (_, diags) = typer::check_program(&k, &opts);
    if diags.is_empty() {
        Ok(k)
    } else {
        Err(diags)
    }
}

/// Check and then evaluate `main`. The outer error is static diagnostics; the
/// inner result is the runtime outcome.
pub fn run_source(
    file: &str,
    src: &str,
    cfg: &DriverConfig,
) -> Result<Result<RunOutcome, RtError>, Vec<Diagnostic>> {
    let k = check_source(file, src, cfg)?;
    Ok(interp::run_program_with(&k, cfg.step_limit, cfg.input.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_prelude_roundtrip() {
        let src = r#"
//> use core
//> use file

def main(): Str = {
  val f = mkFile("a.txt")
  implicit val c = openFile(f)
  writeAll(f, "hi")
  val s = readAll(f)
  closeFile(f)
  s
}
"#;
        let out = run_source("m.cap", src, &DriverConfig::default())
            .expect("diagnostics")
            .expect("runtime");
        assert_eq!(format!("{}", out.value), "\"hi\"");
    }

    #[test]
    fn unknown_module_is_a_parse_error() {
        let e = check_source("m.cap", "//> use nope\n", &DriverConfig::default()).unwrap_err();
        assert_eq!(e[0].code, Code::E_PARSE);
        assert!(e[0].message.contains("nope"));
    }

    #[test]
    fn user_diagnostics_keep_their_lines() {
        let src = "//> use file\ndef main(): Str = {\n  val f = mkFile(\"a\")\n  readAll(f)\n}\n";
        let e = check_source("m.cap", src, &DriverConfig::default()).unwrap_err();
        assert_eq!(e[0].code, Code::E_NO_IMPLICIT);
        assert_eq!(e[0].span.start_line, 4);
        assert_eq!(e[0].span.file.as_ref(), "m.cap");
    }

    #[test]
    fn session_echo_checks_and_runs() {
        let src = r#"
//> use chan

type Proto = Send[Str, Recv[Str, End]]

def serve(c: Chan[Dual[Proto]]^): Unit @kill(c) = {
  val r = recv(c)
  val msg = fst(r)
  val c2 = snd(r)
  val c3 = send(c2, concat("echo: ", msg))
  endChan(c3)
}

def main(): Str = {
  val p = mkChan[Proto](())
  val mine = fstChan(p)
  val theirs = sndChan(p)
  spawn((u: Unit) => serve(theirs))
  val c1 = send(mine, "hi")
  val r = recv(c1)
  endChan(snd(r))
  fst(r)
}
"#;
        let out = run_source("m.cap", src, &DriverConfig::default())
            .expect("diagnostics")
            .expect("runtime");
        assert_eq!(format!("{}", out.value), "\"echo: hi\"");
    }

    #[test]
    fn endpoint_reuse_after_send_is_killed_use() {
        let src = r#"
//> use chan

type Proto = Send[Str, Send[Str, End]]

def main(): Unit = {
  val p = mkChan[Proto](())
  val c = fstChan(p)
  val c1 = send(c, "a")
  val c2 = send(c, "b")
  endChan(send(c1, "x"))
}
"#;
        let e = check_source("m.cap", src, &DriverConfig::default()).unwrap_err();
        assert!(e.iter().any(|d| d.code == Code::E_KILLED_USE), "{e:?}");
    }

    #[test]
    fn lock_prelude_checks_and_runs() {
        let src = r#"
//> use lock

def main(): Str = {
  val t = mkTable(1)
  lock(t)
  val rows = query(t, "select *")
  unlock(t)
  rows
}
"#;
        let out = run_source("m.cap", src, &DriverConfig::default())
            .expect("diagnostics")
            .expect("runtime");
        assert_eq!(format!("{}", out.value), "\"rows(table1: select *)\"");
    }

    #[test]
    fn hand_over_hand_locking_checks_and_runs() {
        // The table lock is released before the row computation: typestate
        // frees us from LIFO lock lifetimes.
        let src = r#"
//> use lock

def main(): Str = {
  val t = mkTable(1)
  lock(t)
  val row = locateRow(t, 2)
  lockRow(t, row)
  unlock(t)
  val result = computeOnRow(row)
  unlockRow(row)
  result
}
"#;
        let out = run_source("m.cap", src, &DriverConfig::default())
            .expect("diagnostics")
            .expect("runtime");
        assert_eq!(format!("{}", out.value), "\"computed(table1.row2)\"");
    }

    #[test]
    fn query_after_unlock_is_killed_use() {
        let src = r#"
//> use lock

def main(): Str = {
  val t = mkTable(1)
  lock(t)
  unlock(t)
  query(t, "select *")
}
"#;
        let e = check_source("m.cap", src, &DriverConfig::default()).unwrap_err();
        assert!(e.iter().any(|d| d.code == Code::E_KILLED_USE), "{e:?}");
    }

    #[test]
    fn dom_balanced_document_checks_and_runs() {
        let src = r#"
//> use dom

def main(): Str = {
  makeDOM((tree: DOM^) => {
    val u = ul(())
    val i = li(())
    openE(tree, u)
    openE(tree, i)
    addText(tree, i, "item")
    closeE(tree, i)
    closeE(tree, u)
  })
}
"#;
        let out = run_source("m.cap", src, &DriverConfig::default())
            .expect("diagnostics")
            .expect("runtime");
        assert_eq!(format!("{}", out.value), "\"<ul><li>item</li></ul>\"");
    }

    #[test]
    fn dom_double_close_is_killed_use() {
        let src = r#"
//> use dom

def main(): Str = {
  makeDOM((tree: DOM^) => {
    val d = div(())
    openE(tree, d)
    closeE(tree, d)
    closeE(tree, d)
  })
}
"#;
        let e = check_source("m.cap", src, &DriverConfig::default()).unwrap_err();
        assert!(e.iter().any(|d| d.code == Code::E_KILLED_USE), "{e:?}");
    }

    #[test]
    fn dom_wrong_close_has_no_implicit() {
        let src = r#"
//> use dom

def main(): Str = {
  makeDOM((tree: DOM^) => {
    val d = div(())
    val h = head(())
    openE(tree, d)
    closeE(tree, h)
    closeE(tree, d)
  })
}
"#;
        let e = check_source("m.cap", src, &DriverConfig::default()).unwrap_err();
        assert!(e.iter().any(|d| d.code == Code::E_NO_IMPLICIT), "{e:?}");
    }

    #[test]
    fn ensure_closed_missing_close_rejected() {
        let src = r#"
//> use file

def main(): Unit = {
  ensureClosed("a.txt", (f: File^) => {
    openF(f)
  })
}
"#;
        let e = check_source("m.cap", src, &DriverConfig::default()).unwrap_err();
        assert!(
            e.iter().any(|d| matches!(d.code, Code::E_TYPE_MISMATCH | Code::E_PATH_MISMATCH)),
            "{e:?}"
        );
    }

    #[test]
    fn ensure_closed_roundtrip_runs() {
        let src = r#"
//> use file

def main(): Unit = {
  ensureClosed("a.txt", (f: File^) => {
    openF(f)
    writeAll(f, "Hello")
    closeF(f)
  })
}
"#;
        run_source("m.cap", src, &DriverConfig::default())
            .expect("diagnostics")
            .expect("runtime");
    }

    #[test]
    fn cross_file_capability_is_path_mismatch() {
        let src = r#"
//> use file

def main(): Unit = {
  ensureClosed("a.txt", (f1: File^) => {
    openF(f1)
    ensureClosed("b.txt", (f2: File^) => {
      closeF(f1)
    })
    closeF(f1)
  })
}
"#;
        let e = check_source("m.cap", src, &DriverConfig::default()).unwrap_err();
        assert!(e.iter().any(|d| d.code == Code::E_PATH_MISMATCH), "{e:?}");
    }

    #[test]
    fn sigma_prelude_checks_and_runs() {
        let src = r#"
//> use file
//> use filesigma

def main(): Str = {
  val f = openFileS("a.txt")
  writeAll(f, "data")
  val r = readAll(f)
  closeFile(f)
  r
}
"#;
        let out = run_source("m.cap", src, &DriverConfig::default())
            .expect("diagnostics")
            .expect("runtime");
        assert_eq!(format!("{}", out.value), "\"data\"");
    }
}
