//! Kernel IR: the desugared core language.
//!
//! Surface arrow sugar (`?=>`, `=!>`, `?<=`, `?=!>?`, ...) is gone here;
//! every function type is a unary dependent arrow with an explicit kill set,
//! every call is a unary application, and method-call syntax has been
//! flattened to plain application. Qualifiers and kill sets are canonical
//! ordered sets so type equality is structural.

use std::collections::BTreeSet;
use std::fmt;

use crate::span::Span;

/// A term path `x.a.b`: a variable followed by field selections.
pub type Path = Vec<String>;

pub fn path_str(p: &Path) -> String {
    p.join(".")
}

// ---------------------------------------------------------------------------
// Qualifiers and kill sets

/// A reachability qualifier: a set of tracked variables, a set of qualifier
/// variables (from `[T^q]` parameters), and a freshness marker.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qualifier {
    pub vars: BTreeSet<String>,
    pub qvars: BTreeSet<String>,
    pub fresh: bool,
    /// Written `^{}`: explicitly reaches nothing. Unlike an unannotated
    /// (defaulted) qualifier, an untracked position demands that whatever
    /// flows into it reaches nothing.
    pub untracked: bool,
}

impl Qualifier {
    pub fn empty() -> Qualifier {
        Qualifier::default()
    }

    pub fn fresh() -> Qualifier {
        Qualifier { fresh: true, ..Qualifier::default() }
    }

    pub fn var(x: impl Into<String>) -> Qualifier {
        let mut q = Qualifier::default();
        q.vars.insert(x.into());
        q
    }

    pub fn vars<I: IntoIterator<Item = S>, S: Into<String>>(xs: I) -> Qualifier {
        let mut q = Qualifier::default();
        q.vars.extend(xs.into_iter().map(Into::into));
        q
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty() && self.qvars.is_empty() && !self.fresh
    }

    pub fn union(&self, other: &Qualifier) -> Qualifier {
        Qualifier {
            vars: self.vars.union(&other.vars).cloned().collect(),
            qvars: self.qvars.union(&other.qvars).cloned().collect(),
            fresh: self.fresh || other.fresh,
            untracked: self.untracked && other.untracked,
        }
    }
}

impl fmt::Display for Qualifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "^{{}}");
        }
        if self.vars.is_empty() && self.qvars.is_empty() {
            return write!(f, "^");
        }
        let mut items: Vec<&str> = self.vars.iter().map(String::as_str).collect();
        items.extend(self.qvars.iter().map(String::as_str));
        write!(f, "^{{{}}}", items.join(", "))?;
        if self.fresh {
            write!(f, "^")?;
        }
        Ok(())
    }
}

/// The kill (latent effect) of an arrow: variables whose capabilities die at
/// the call, plus the `FUN` self/one-shot marker.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KillSet {
    pub vars: BTreeSet<String>,
    pub fun: bool,
}

impl KillSet {
    pub fn empty() -> KillSet {
        KillSet::default()
    }

    pub fn var(x: impl Into<String>) -> KillSet {
        let mut k = KillSet::default();
        k.vars.insert(x.into());
        k
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty() && !self.fun
    }

    pub fn union(&self, other: &KillSet) -> KillSet {
        KillSet { vars: self.vars.union(&other.vars).cloned().collect(), fun: self.fun || other.fun }
    }
}

impl fmt::Display for KillSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut items: Vec<String> = self.vars.iter().cloned().collect();
        if self.fun {
            items.push("FUN".to_string());
        }
        write!(f, "@kill({})", items.join(", "))
    }
}

// ---------------------------------------------------------------------------
// Types

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimTy {
    Unit,
    Bool,
    Int,
    Str,
    Nothing,
}

impl PrimTy {
    pub fn name(&self) -> &'static str {
        match self {
            PrimTy::Unit => "Unit",
            PrimTy::Bool => "Bool",
            PrimTy::Int => "Int",
            PrimTy::Str => "Str",
            PrimTy::Nothing => "Nothing",
        }
    }
}

/// A qualified type: the shape plus its reachability qualifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QType {
    pub ty: KType,
    pub qual: Qualifier,
}

impl QType {
    pub fn plain(ty: KType) -> QType {
        QType { ty, qual: Qualifier::empty() }
    }

    pub fn unit() -> QType {
        QType::plain(KType::Prim(PrimTy::Unit))
    }

    pub fn with_qual(self, qual: Qualifier) -> QType {
        QType { ty: self.ty, qual }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KType {
    Prim(PrimTy),
    /// Class reference, possibly applied: `File`, `Send[Str, P]`, `A :: L`.
    Named { name: String, args: Vec<QType> },
    /// Type variable bound by a `[T]` parameter list.
    Var(String),
    /// Type-level natural, e.g. the index in `Var[0]`.
    Nat(i64),
    /// Path-dependent member type: `f.IsOpen`, `tree.Elems[L]`.
    PathMember { path: Path, member: String, args: Vec<QType> },
    /// Singleton type `p.type`.
    Singleton(Path),
    /// Class-member projection without a prefix value: `Table#Row`.
    Project { class: String, member: String },
    /// Dependent arrow. `implicit` marks `?=>`-style parameters; `kill` is
    /// the latent effect released when the function is applied.
    DepFun {
        binder: String,
        implicit: bool,
        param: Box<QType>,
        result: Box<QType>,
        kill: KillSet,
    },
    /// Dependent pair `Sigma { A; B }` with `B` mentioning the binder.
    Sigma { binder: String, a: Box<QType>, b: Box<QType> },
    /// Unreduced type-function application, e.g. `Dual[P]`.
    TypeFun { name: String, args: Vec<QType> },
}

impl KType {
    pub fn named(name: impl Into<String>) -> KType {
        KType::Named { name: name.into(), args: Vec::new() }
    }
}

impl fmt::Display for KType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KType::Prim(p) => f.write_str(p.name()),
            KType::Named { name, args } | KType::TypeFun { name, args } => {
                if name == "::" && args.len() == 2 {
                    return write!(f, "{} :: {}", args[0], args[1]);
                }
                f.write_str(name)?;
                if !args.is_empty() {
                    let items: Vec<String> = args.iter().map(|a| a.to_string()).collect();
                    write!(f, "[{}]", items.join(", "))?;
                }
                Ok(())
            }
            KType::Var(v) => f.write_str(v),
            KType::Nat(n) => write!(f, "{n}"),
            KType::PathMember { path, member, args } => {
                write!(f, "{}.{}", path_str(path), member)?;
                if !args.is_empty() {
                    let items: Vec<String> = args.iter().map(|a| a.to_string()).collect();
                    write!(f, "[{}]", items.join(", "))?;
                }
                Ok(())
            }
            KType::Singleton(p) => write!(f, "{}.type", path_str(p)),
            KType::Project { class, member } => write!(f, "{class}#{member}"),
            KType::DepFun { binder, implicit, param, result, kill } => {
                let arrow = if *implicit { "?=>" } else { "=>" };
                write!(f, "({binder}: {param}) {arrow} {result}")?;
                if !kill.is_empty() {
                    write!(f, " {kill}")?;
                }
                Ok(())
            }
            KType::Sigma { binder, a, b } => {
                write!(f, "Sigma {{ {binder}: {a}; {b} }}")
            }
        }
    }
}

impl fmt::Display for QType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.qual.is_empty() {
            write!(f, "{}", self.ty)
        } else if self.qual.fresh && self.qual.vars.is_empty() && self.qual.qvars.is_empty() {
            match self.ty {
                KType::DepFun { .. } | KType::Sigma { .. } => write!(f, "({})^", self.ty),
                _ => write!(f, "{}^", self.ty),
            }
        } else {
            match self.ty {
                KType::DepFun { .. } | KType::Sigma { .. } => {
                    write!(f, "({}){}", self.ty, self.qual)
                }
                _ => write!(f, "{}{}", self.ty, self.qual),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Terms

#[derive(Debug, Clone, PartialEq)]
pub struct KExpr {
    pub kind: KExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KExprKind {
    Unit,
    Bool(bool),
    Int(i64),
    Str(String),
    Var(String),
    /// Field selection: Sigma projection (`s.a`, `s.b`) or path extension.
    Select { base: Box<KExpr>, field: String },
    Apply { func: Box<KExpr>, arg: Box<KExpr> },
    TyApply { func: Box<KExpr>, args: Vec<QType> },
    Lambda { param: String, ty: Option<QType>, implicit: bool, body: Box<KExpr> },
    Block { stmts: Vec<KStmt> },
    If { cond: Box<KExpr>, then_branch: Box<KExpr>, else_branch: Option<Box<KExpr>> },
    Summon(QType),
    Ascribe { expr: Box<KExpr>, ty: QType },
    Throw(Box<KExpr>),
    SigmaIntro { a_ty: Option<QType>, b_ty: Option<QType>, a: Box<KExpr>, b: Box<KExpr> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum KStmt {
    Let { implicit: bool, name: String, ty: Option<QType>, init: KExpr, span: Span },
    Def(KDef),
    Expr(KExpr),
}

impl KStmt {
    pub fn span(&self) -> &Span {
        match self {
            KStmt::Let { span, .. } => span,
            KStmt::Def(d) => &d.span,
            KStmt::Expr(e) => &e.span,
        }
    }
}

// ---------------------------------------------------------------------------
// Declarations

#[derive(Debug, Clone, PartialEq)]
pub struct KTyParam {
    pub name: String,
    /// `[T^q]` introduces qualifier variable `q` alongside `T`.
    pub qual_param: Option<String>,
    pub bound: Option<KType>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KParam {
    pub name: String,
    pub implicit: bool,
    pub ty: QType,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KDef {
    pub name: String,
    pub typarams: Vec<KTyParam>,
    pub params: Vec<KParam>,
    pub ret: QType,
    /// Latent kill released when the final parameter is applied.
    pub kill: KillSet,
    pub body: Option<KExpr>,
    pub extern_prim: Option<String>,
    pub span: Span,
}

impl KDef {
    /// The curried arrow type this definition has when referenced as a value.
    pub fn value_type(&self) -> QType {
        let mut ty = self.ret.clone();
        let mut kill = self.kill.clone();
        for p in self.params.iter().rev() {
            ty = QType::plain(KType::DepFun {
                binder: p.name.clone(),
                implicit: p.implicit,
                param: Box::new(p.ty.clone()),
                result: Box::new(ty),
                kill: std::mem::take(&mut kill),
            });
        }
        ty
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KClass {
    pub name: String,
    pub typarams: Vec<KTyParam>,
    pub parent: Option<KType>,
    /// Abstract type members: name and parameter list.
    pub type_members: Vec<(String, Vec<KTyParam>)>,
    pub nested: Vec<KClass>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KTypeFunCase {
    pub con: String,
    pub vars: Vec<String>,
    pub body: KType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KTypeFun {
    pub name: String,
    pub params: Vec<KTyParam>,
    pub bound: Option<KType>,
    /// Which parameter the match scrutinizes.
    pub scrutinee: String,
    pub cases: Vec<KTypeFunCase>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KVal {
    pub implicit: bool,
    pub name: String,
    pub ty: Option<QType>,
    pub init: KExpr,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KProgram {
    pub classes: Vec<KClass>,
    pub typefuns: Vec<KTypeFun>,
    pub defs: Vec<KDef>,
    pub vals: Vec<KVal>,
}

impl KProgram {
    pub fn def(&self, name: &str) -> Option<&KDef> {
        self.defs.iter().find(|d| d.name == name)
    }

    pub fn defs_named(&self, name: &str) -> Vec<&KDef> {
        self.defs.iter().filter(|d| d.name == name).collect()
    }
}

// ---------------------------------------------------------------------------
// Printing (used by `dump` and diagnostics)

pub fn print_expr(e: &KExpr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e, 0);
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_expr(out: &mut String, e: &KExpr, depth: usize) {
    match &e.kind {
        KExprKind::Unit => out.push_str("()"),
        KExprKind::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        KExprKind::Int(n) => out.push_str(&n.to_string()),
        KExprKind::Str(s) => out.push_str(&format!("{s:?}")),
        KExprKind::Var(x) => out.push_str(x),
        KExprKind::Select { base, field } => {
            write_atom(out, base, depth);
            out.push('.');
            out.push_str(field);
        }
        KExprKind::Apply { func, arg } => {
            write_atom(out, func, depth);
            out.push('(');
            write_expr(out, arg, depth);
            out.push(')');
        }
        KExprKind::TyApply { func, args } => {
            write_atom(out, func, depth);
            out.push('[');
            out.push_str(&args.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", "));
            out.push(']');
        }
        KExprKind::Lambda { param, ty, implicit, body } => {
            out.push('(');
            if *implicit {
                out.push_str("using ");
            }
            out.push_str(param);
            if let Some(t) = ty {
                out.push_str(&format!(": {t}"));
            }
            out.push_str(") => ");
            write_expr(out, body, depth);
        }
        KExprKind::Block { stmts } => {
            out.push_str("{\n");
            for s in stmts {
                indent(out, depth + 1);
                match s {
                    KStmt::Let { implicit, name, ty, init, .. } => {
                        if *implicit {
                            out.push_str("implicit ");
                        }
                        out.push_str("val ");
                        out.push_str(name);
                        if let Some(t) = ty {
                            out.push_str(&format!(": {t}"));
                        }
                        out.push_str(" = ");
                        write_expr(out, init, depth + 1);
                    }
                    KStmt::Def(d) => {
                        out.push_str(&format!("def {}: {} = ", d.name, d.value_type()));
                        if let Some(b) = &d.body {
                            write_expr(out, b, depth + 1);
                        }
                    }
                    KStmt::Expr(e) => write_expr(out, e, depth + 1),
                }
                out.push('\n');
            }
            indent(out, depth);
            out.push('}');
        }
        KExprKind::If { cond, then_branch, else_branch } => {
            out.push_str("if (");
            write_expr(out, cond, depth);
            out.push_str(") ");
            write_expr(out, then_branch, depth);
            if let Some(e) = else_branch {
                out.push_str(" else ");
                write_expr(out, e, depth);
            }
        }
        KExprKind::Summon(t) => out.push_str(&format!("summon[{t}]")),
        KExprKind::Ascribe { expr, ty } => {
            out.push('(');
            write_expr(out, expr, depth);
            out.push_str(&format!(": {ty})"));
        }
        KExprKind::Throw(inner) => {
            out.push_str("throw ");
            write_expr(out, inner, depth);
        }
        KExprKind::SigmaIntro { a, b, .. } => {
            out.push_str("sigma(");
            write_expr(out, a, depth);
            out.push_str(", ");
            write_expr(out, b, depth);
            out.push(')');
        }
    }
}

fn write_atom(out: &mut String, e: &KExpr, depth: usize) {
    match &e.kind {
        KExprKind::Lambda { .. } | KExprKind::If { .. } | KExprKind::Throw(_) => {
            out.push('(');
            write_expr(out, e, depth);
            out.push(')');
        }
        _ => write_expr(out, e, depth),
    }
}

pub fn print_program(p: &KProgram) -> String {
    let mut out = String::new();
    for d in &p.defs {
        out.push_str(&format!("def {} : {}", d.name, d.value_type()));
        if let Some(prim) = &d.extern_prim {
            out.push_str(&format!(" = \"{prim}\""));
        } else if let Some(b) = &d.body {
            out.push_str(" = ");
            write_expr(&mut out, b, 0);
        }
        out.push('\n');
    }
    for v in &p.vals {
        if v.implicit {
            out.push_str("implicit ");
        }
        out.push_str(&format!("val {} = ", v.name));
        write_expr(&mut out, &v.init, 0);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qualifier_display() {
        assert_eq!(Qualifier::empty().to_string(), "^{}");
        assert_eq!(Qualifier::fresh().to_string(), "^");
        assert_eq!(Qualifier::vars(["f", "g"]).to_string(), "^{f, g}");
    }

    #[test]
    fn value_type_curries_with_innermost_kill() {
        let span = Span::point(std::sync::Arc::from("t"), 1, 1);
        let d = KDef {
            name: "close".into(),
            typarams: vec![],
            params: vec![
                KParam {
                    name: "f".into(),
                    implicit: false,
                    ty: QType::plain(KType::named("File")),
                    span: span.clone(),
                },
                KParam {
                    name: "c".into(),
                    implicit: true,
                    ty: QType::plain(KType::PathMember {
                        path: vec!["f".into()],
                        member: "IsOpen".into(),
                        args: vec![],
                    }),
                    span: span.clone(),
                },
            ],
            ret: QType::unit(),
            kill: KillSet::var("c"),
            body: None,
            extern_prim: Some("file.close".into()),
            span,
        };
        assert_eq!(
            d.value_type().to_string(),
            "(f: File) => (c: f.IsOpen) ?=> Unit @kill(c)"
        );
    }
}
