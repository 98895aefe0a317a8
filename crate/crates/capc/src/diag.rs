//! Diagnostic model and rendering shared by all phases.

use std::fmt;

use serde::Serialize;

use crate::span::Span;

/// The closed set of diagnostic codes. Variant names mirror the exact code
/// strings emitted on the wire.
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Code {
    E_PARSE,
    E_DESUGAR,
    E_UNKNOWN_METHOD,
    E_UNBOUND,
    E_TYPE_MISMATCH,
    E_PATH_MISMATCH,
    E_NO_IMPLICIT,
    E_AMBIGUOUS_IMPLICIT,
    E_KILLED_USE,
    E_KILL_UNDECLARED,
    E_ESCAPE,
    E_SUBQUAL,
    E_SUBST_PATH,
    E_UNRESOLVED_TYPEPARAM,
    E_BOUND,
    E_TYPEFUN_STUCK,
}

impl Code {
    pub const ALL: [Code; 16] = [
        Code::E_PARSE,
        Code::E_DESUGAR,
        Code::E_UNKNOWN_METHOD,
        Code::E_UNBOUND,
        Code::E_TYPE_MISMATCH,
        Code::E_PATH_MISMATCH,
        Code::E_NO_IMPLICIT,
        Code::E_AMBIGUOUS_IMPLICIT,
        Code::E_KILLED_USE,
        Code::E_KILL_UNDECLARED,
        Code::E_ESCAPE,
        Code::E_SUBQUAL,
        Code::E_SUBST_PATH,
        Code::E_UNRESOLVED_TYPEPARAM,
        Code::E_BOUND,
        Code::E_TYPEFUN_STUCK,
    ];

    pub fn parse(s: &str) -> Option<Code> {
        Code::ALL.iter().copied().find(|c| c.as_str() == s)
    }

    /// A short prose explanation of the error class, printed by
    /// `capc check --explain CODE`.
    pub fn explain(&self) -> &'static str {
        match self {
            Code::E_PARSE => "The source text does not match the grammar.",
            Code::E_DESUGAR => {
                "The surface program cannot be lowered to the kernel language, \
                 e.g. a reserved `$` name or a malformed Sigma literal."
            }
            Code::E_UNKNOWN_METHOD => "The named definition or field does not exist.",
            Code::E_UNBOUND => "A variable, class, or capability member is not in scope.",
            Code::E_TYPE_MISMATCH => "The expression's type does not fit the expected type.",
            Code::E_PATH_MISMATCH => {
                "A capability for one object was supplied where a capability for a \
                 different object is required. Path-dependent capability types are \
                 tied to the variable they are prefixed with: `f1.IsClosed` and \
                 `f2.IsClosed` are unrelated types."
            }
            Code::E_NO_IMPLICIT => {
                "No live implicit value of the required type is in scope. Note that \
                 candidates whose capability has already been consumed are skipped \
                 (unless --scala-compat is set)."
            }
            Code::E_AMBIGUOUS_IMPLICIT => {
                "Two or more live implicit candidates of the required type exist at \
                 the same scope depth, so resolution cannot choose between them."
            }
            Code::E_KILLED_USE => {
                "A variable is used after a capability it can reach was consumed. \
                 The use site's qualifier is transitively saturated through the \
                 context and must stay disjoint from the accumulated kill set; the \
                 attached notes show the reachability witness chain from the used \
                 variable to the killed one, and where it was consumed."
            }
            Code::E_KILL_UNDECLARED => {
                "A function body consumes a capability from an enclosing scope, but \
                 its arrow type does not declare that kill with `@kill(...)`."
            }
            Code::E_ESCAPE => {
                "A tracked value would outlive the scope of a variable its type or \
                 qualifier mentions, e.g. returning a block-local resource or \
                 throwing a tracked value."
            }
            Code::E_SUBQUAL => {
                "The value's reachability qualifier is not included in the expected \
                 one: it can reach resources the target type does not permit. This \
                 is the leak check: a fresh or scoped resource cannot flow into a \
                 position whose qualifier does not account for it."
            }
            Code::E_SUBST_PATH => {
                "Applying a dependent function requires substituting the argument's \
                 access path into the result type, but the argument is not a path \
                 (e.g. a compound expression), so the path-dependent type cannot \
                 be formed."
            }
            Code::E_UNRESOLVED_TYPEPARAM => {
                "A type parameter could not be inferred from the arguments; supply \
                 it explicitly with `f[T](...)`."
            }
            Code::E_BOUND => "A type argument does not satisfy the parameter's declared bound.",
            Code::E_TYPEFUN_STUCK => {
                "A type-level function was applied to a constructor it has no case \
                 for, so the application cannot reduce."
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Code::E_PARSE => "E_PARSE",
            Code::E_DESUGAR => "E_DESUGAR",
            Code::E_UNKNOWN_METHOD => "E_UNKNOWN_METHOD",
            Code::E_UNBOUND => "E_UNBOUND",
            Code::E_TYPE_MISMATCH => "E_TYPE_MISMATCH",
            Code::E_PATH_MISMATCH => "E_PATH_MISMATCH",
            Code::E_NO_IMPLICIT => "E_NO_IMPLICIT",
            Code::E_AMBIGUOUS_IMPLICIT => "E_AMBIGUOUS_IMPLICIT",
            Code::E_KILLED_USE => "E_KILLED_USE",
            Code::E_KILL_UNDECLARED => "E_KILL_UNDECLARED",
            Code::E_ESCAPE => "E_ESCAPE",
            Code::E_SUBQUAL => "E_SUBQUAL",
            Code::E_SUBST_PATH => "E_SUBST_PATH",
            Code::E_UNRESOLVED_TYPEPARAM => "E_UNRESOLVED_TYPEPARAM",
            Code::E_BOUND => "E_BOUND",
            Code::E_TYPEFUN_STUCK => "E_TYPEFUN_STUCK",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub code: Code,
    pub span: Span,
    pub message: String,
    /// Secondary notes, e.g. the saturation witness chain for E_KILLED_USE.
    pub related: Vec<(Span, String)>,
}

impl Diagnostic {
    pub fn new(code: Code, span: Span, message: impl Into<String>) -> Diagnostic {
        Diagnostic { code, span, message: message.into(), related: Vec::new() }
    }

    pub fn with_note(mut self, span: Span, note: impl Into<String>) -> Diagnostic {
        self.related.push((span, note.into()));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Human,
    Json,
}

#[derive(Serialize)]
struct JsonDiag<'a> {
    code: &'a str,
    file: &'a str,
    #[serde(rename = "startLine")]
    start_line: u32,
    #[serde(rename = "startCol")]
    start_col: u32,
    #[serde(rename = "endLine")]
    end_line: u32,
    #[serde(rename = "endCol")]
    end_col: u32,
    message: &'a str,
}

fn color_enabled() -> bool {
    std::env::var("CAPC_COLOR").map(|v| v != "0").unwrap_or(true)
}

/// Render one diagnostic. Human mode shows a source excerpt with a caret
/// underline when the source text is available.
pub fn render(d: &Diagnostic, mode: RenderMode, source: Option<&str>) -> String {
    match mode {
        RenderMode::Json => {
            let j = JsonDiag {
                code: d.code.as_str(),
                file: &d.span.file,
                start_line: d.span.start_line,
                start_col: d.span.start_col,
                end_line: d.span.end_line,
                end_col: d.span.end_col,
                message: &d.message,
            };
            serde_json::to_string(&j).expect("diagnostic serializes")
        }
        RenderMode::Human => {
            let (bold, red, reset) = if color_enabled() {
                ("\x1b[1m", "\x1b[31m", "\x1b[0m")
            } else {
                ("", "", "")
            };
            let mut out = format!(
                "{bold}{file}:{line}:{col}:{reset} {red}error[{code}]{reset}: {msg}\n",
                file = d.span.file,
                line = d.span.start_line,
                col = d.span.start_col,
                code = d.code,
                msg = d.message,
            );
            if let Some(src) = source {
                if let Some(line) = src.lines().nth(d.span.start_line as usize - 1) {
                    out.push_str(&format!("  {}\n", line));
                    let caret_start = d.span.start_col as usize - 1;
                    let caret_len = if d.span.end_line == d.span.start_line {
                        (d.span.end_col - d.span.start_col).max(1) as usize
                    } else {
                        line.chars().count().saturating_sub(caret_start).max(1)
                    };
                    out.push_str(&format!("  {}{}\n", " ".repeat(caret_start), "^".repeat(caret_len)));
                }
            }
            for (span, note) in &d.related {
                out.push_str(&format!("  note: {span}: {note}\n"));
            }
            out
        }
    }
}

/// Sort diagnostics by file then span, the order all phases report in.
pub fn sort_diags(diags: &mut Vec<Diagnostic>) {
    diags.sort_by(|a, b| a.span.cmp(&b.span).then_with(|| a.code.cmp(&b.code)));
}
