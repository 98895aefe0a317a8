//! Canonical printer for the surface AST. Printing then re-parsing yields the
//! same tree (modulo spans); the round-trip property tests rely on this.

use super::ast::*;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for d in &p.decls {
        out.push_str(&print_decl(d, 0));
        out.push('\n');
    }
    out
}

fn ind(n: usize) -> String {
    "  ".repeat(n)
}

pub fn print_decl(d: &Decl, depth: usize) -> String {
    match d {
        Decl::Class(c) => print_class(c, depth),
        Decl::TypeAlias { name, params, body, .. } => {
            format!("{}type {}{} = {}", ind(depth), name, print_typarams(params), print_type(body))
        }
        Decl::TypeFun(t) => {
            let mut out = format!(
                "{}typefun {}{}{} = match {} {{\n",
                ind(depth),
                t.name,
                print_typarams(&t.params),
                t.bound.as_ref().map(|b| format!(" <: {}", print_type(b))).unwrap_or_default(),
                t.scrutinee
            );
            for c in &t.cases {
                let vars = if c.vars.is_empty() {
                    String::new()
                } else {
                    format!("[{}]", c.vars.join(", "))
                };
                out.push_str(&format!(
                    "{}case {}{} => {}\n",
                    ind(depth + 1),
                    c.con,
                    vars,
                    print_type(&c.body)
                ));
            }
            out.push_str(&format!("{}}}", ind(depth)));
            out
        }
        Decl::Def(d) => print_def(d, depth),
        Decl::Extension(e) => {
            let mut out = format!(
                "{}extension ({}: {}) {{\n",
                ind(depth),
                e.binder,
                print_type(&e.recv_ty)
            );
            for d in &e.defs {
                out.push_str(&print_def(d, depth + 1));
                out.push('\n');
            }
            out.push_str(&format!("{}}}", ind(depth)));
            out
        }
        Decl::Val(v) => print_val(v, depth),
    }
}

fn print_class(c: &ClassDecl, depth: usize) -> String {
    let mut out = format!("{}class {}{}", ind(depth), c.name, print_typarams(&c.params));
    if let Some(p) = &c.parent {
        out.push_str(&format!(" extends {}", print_type(p)));
    }
    if !c.members.is_empty() {
        out.push_str(" {\n");
        for m in &c.members {
            match m {
                ClassMember::TypeMember { name, params, .. } => {
                    out.push_str(&format!("{}type {}{}\n", ind(depth + 1), name, print_typarams(params)))
                }
                ClassMember::Nested(n) => {
                    out.push_str(&print_class(n, depth + 1));
                    out.push('\n');
                }
            }
        }
        out.push_str(&format!("{}}}", ind(depth)));
    }
    out
}

fn print_typarams(ps: &[TyParam]) -> String {
    if ps.is_empty() {
        return String::new();
    }
    let items: Vec<String> = ps
        .iter()
        .map(|p| {
            let mut s = p.name.clone();
            if let Some(q) = &p.qual_param {
                s.push('^');
                s.push_str(q);
            }
            if let Some(b) = &p.bound {
                s.push_str(&format!(" <: {}", print_type(b)));
            }
            s
        })
        .collect();
    format!("[{}]", items.join(", "))
}

fn print_def(d: &DefDecl, depth: usize) -> String {
    let mut out = ind(depth);
    if d.extern_prim.is_some() {
        out.push_str("extern ");
    }
    out.push_str(&format!("def {}{}", d.name, print_typarams(&d.typarams)));
    for c in &d.clauses {
        out.push('(');
        if c.using {
            out.push_str("using ");
        }
        let items: Vec<String> = c
            .params
            .iter()
            .map(|p| {
                format!(
                    "{}: {}{}",
                    p.name,
                    if p.by_name { "=> " } else { "" },
                    print_type(&p.ty)
                )
            })
            .collect();
        out.push_str(&items.join(", "));
        out.push(')');
    }
    if let Some(r) = &d.ret {
        out.push_str(&format!(": {}", print_type(r)));
    }
    if let Some(prim) = &d.extern_prim {
        out.push_str(&format!(" = \"{}\"", prim));
    } else if let Some(body) = &d.body {
        out.push_str(&format!(" = {}", print_expr(body, depth)));
    }
    out
}

fn print_val(v: &ValBind, depth: usize) -> String {
    format!(
        "{}{}val {}{} = {}",
        ind(depth),
        if v.implicit { "implicit " } else { "" },
        v.name,
        v.ty.as_ref().map(|t| format!(": {}", print_type(t))).unwrap_or_default(),
        print_expr(&v.init, depth)
    )
}

fn arrow_str(a: Arrow) -> &'static str {
    match a {
        Arrow::Plain => "=>",
        Arrow::Implicit => "?=>",
        Arrow::Kill => "=!>",
        Arrow::ImplicitKill => "?=!>",
        Arrow::Sigma => "?<=",
        Arrow::Transition => "?=!>?",
    }
}

pub fn print_type(t: &SType) -> String {
    match &t.kind {
        STypeKind::Named(n) => n.clone(),
        STypeKind::Project(base, m) => format!("{}#{}", print_type_atom(base), m),
        STypeKind::Member { path, member, args } => {
            let mut s = format!("{}.{}", path.join("."), member);
            if !args.is_empty() {
                s.push_str(&format!(
                    "[{}]",
                    args.iter().map(print_type).collect::<Vec<_>>().join(", ")
                ));
            }
            s
        }
        STypeKind::Singleton { path } => format!("{}.type", path.join(".")),
        STypeKind::Applied { head, args } => format!(
            "{}[{}]",
            head,
            args.iter().map(print_type).collect::<Vec<_>>().join(", ")
        ),
        STypeKind::Cons { head, tail } => {
            format!("{} :: {}", print_type_atom(head), print_type(tail))
        }
        STypeKind::Fun { binder, arrow, param, result } => {
            let lhs = match binder {
                Some(b) => format!("({}: {})", b, print_type(param)),
                None => print_type_atom(param),
            };
            format!("{} {} {}", lhs, arrow_str(*arrow), print_type(result))
        }
        STypeKind::Qualified { base, qual } => {
            let q = if qual.fresh_only && qual.vars.is_empty() {
                "^".to_string()
            } else {
                format!("^{{{}}}", qual.vars.join(", "))
            };
            format!("{}{}", print_type_atom(base), q)
        }
        STypeKind::KillAnnot { base, kills } => {
            let items: Vec<String> = kills
                .iter()
                .map(|k| match k {
                    KillItem::Var(v) => v.clone(),
                    KillItem::Fun => "FUN".to_string(),
                })
                .collect();
            format!("{} @kill({})", print_type(base), items.join(", "))
        }
        STypeKind::Nat(n) => n.to_string(),
        STypeKind::Refined { base, members } => {
            let items: Vec<String> =
                members.iter().map(|(n, t)| format!("type {} = {}", n, print_type(t))).collect();
            format!("{} {{ {} }}", base, items.join("; "))
        }
    }
}

/// Like [`print_type`] but parenthesizes arrows and cons so they can appear
/// on the left of another operator.
fn print_type_atom(t: &SType) -> String {
    match &t.kind {
        STypeKind::Fun { .. } | STypeKind::Cons { .. } | STypeKind::KillAnnot { .. } => {
            format!("({})", print_type(t))
        }
        _ => print_type(t),
    }
}

pub fn print_expr(e: &Expr, depth: usize) -> String {
    match &e.kind {
        ExprKind::Unit => "()".to_string(),
        ExprKind::Bool(b) => b.to_string(),
        ExprKind::Int(n) => n.to_string(),
        ExprKind::Str(s) => format!("{:?}", s),
        ExprKind::Var(x) => x.clone(),
        ExprKind::Block(stmts) => {
            let mut out = "{\n".to_string();
            for s in stmts {
                let line = match s {
                    Stmt::Val(v) => print_val(v, depth + 1),
                    Stmt::Def(d) => print_def(d, depth + 1),
                    Stmt::Expr(e) => format!("{}{}", ind(depth + 1), print_expr(e, depth + 1)),
                };
                out.push_str(&line);
                out.push('\n');
            }
            out.push_str(&format!("{}}}", ind(depth)));
            out
        }
        ExprKind::If { cond, then_branch, else_branch } => {
            let mut out = format!(
                "if ({}) {}",
                print_expr(cond, depth),
                print_expr(then_branch, depth)
            );
            if let Some(e) = else_branch {
                out.push_str(&format!(" else {}", print_expr(e, depth)));
            }
            out
        }
        ExprKind::Lambda { params, body } => {
            let items: Vec<String> = params
                .iter()
                .map(|p| match &p.ty {
                    Some(t) => format!("{}: {}", p.name, print_type(t)),
                    None => p.name.clone(),
                })
                .collect();
            format!("({}) => {}", items.join(", "), print_expr(body, depth))
        }
        ExprKind::Apply { func, type_args, args } => {
            let ta = if type_args.is_empty() {
                String::new()
            } else {
                format!("[{}]", type_args.iter().map(print_type).collect::<Vec<_>>().join(", "))
            };
            let argl = match args {
                Some(args) => format!(
                    "({})",
                    args.iter().map(|a| print_expr(a, depth)).collect::<Vec<_>>().join(", ")
                ),
                None => String::new(),
            };
            format!("{}{}{}", print_expr_atom(func, depth), ta, argl)
        }
        ExprKind::MethodCall { recv, name, type_args, args } => {
            let ta = if type_args.is_empty() {
                String::new()
            } else {
                format!("[{}]", type_args.iter().map(print_type).collect::<Vec<_>>().join(", "))
            };
            let argl = match args {
                None => String::new(),
                Some(args) => format!(
                    "({})",
                    args.iter().map(|a| print_expr(a, depth)).collect::<Vec<_>>().join(", ")
                ),
            };
            format!("{}.{}{}{}", print_expr_atom(recv, depth), name, ta, argl)
        }
        ExprKind::Summon(t) => format!("summon[{}]", print_type(t)),
        ExprKind::Ascribe { expr, ty } => {
            format!("({}: {})", print_expr(expr, depth), print_type(ty))
        }
        ExprKind::Throw(inner) => format!("throw {}", print_expr(inner, depth)),
        ExprKind::SigmaNew { members, a, b } => {
            let mut items: Vec<String> =
                members.iter().map(|(n, t)| format!("type {} = {}", n, print_type(t))).collect();
            items.push(format!("val a = {}", print_expr(a, depth)));
            items.push(format!("val b = {}", print_expr(b, depth)));
            format!("new Sigma {{ {} }}", items.join("; "))
        }
    }
}

fn print_expr_atom(e: &Expr, depth: usize) -> String {
    match &e.kind {
        ExprKind::Lambda { .. } | ExprKind::If { .. } | ExprKind::Throw(_) => {
            format!("({})", print_expr(e, depth))
        }
        _ => print_expr(e, depth),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parser::{parse_expr_str, parse_program, parse_type_str};

    fn roundtrip_ty(src: &str) {
        let t1 = parse_type_str("t.cap", src).unwrap();
        let printed = print_type(&t1);
        let t2 = parse_type_str("t.cap", &printed).unwrap();
        assert_eq!(strip_ty(&t1), strip_ty(&t2), "printed as {printed}");
    }

    // Structural comparison ignoring spans: re-print both and compare text.
    fn strip_ty(t: &crate::syntax::ast::SType) -> String {
        print_type(t)
    }

    #[test]
    fn type_roundtrips() {
        for src in [
            "File^",
            "File^{f, g}",
            "(c: f.IsOpen^) => f.IsClosed^ @kill(c)",
            "f.IsOpen ?=!> Unit",
            "s.a.type",
            "Table#Row",
            "Send[Str, Recv[Str, End]] :: PNil",
            "Sigma { type A = File^; type B = Cap }",
            "S1 ?=!>? S2",
            "B ?<= A",
        ] {
            roundtrip_ty(src);
        }
    }

    #[test]
    fn expr_roundtrips() {
        for src in [
            "open(f)",
            "f.close(c)",
            "withFile[Str]((f) => readAll(f))",
            "{\n  val x = 1\n  x\n}",
            "if (b) x else y",
            "summon[f.IsOpen]",
            "new Sigma { type A = File^; type B = Cap; val a = f; val b = c }",
        ] {
            let e1 = parse_expr_str("t.cap", src).unwrap();
            let printed = print_expr(&e1, 0);
            let e2 = parse_expr_str("t.cap", &printed).unwrap();
            assert_eq!(print_expr(&e2, 0), printed);
        }
    }

    #[test]
    fn program_roundtrips() {
        let src = r#"
class File
extern def open(f: File): f.IsOpen^ = "file.open"
def use2(f: File)(using c: f.IsOpen): Unit = {
  readAll(f)
  ()
}
"#;
        let p1 = parse_program("t.cap", src).unwrap();
        let printed = print_program(&p1);
        let p2 = parse_program("t.cap", &printed).unwrap();
        assert_eq!(print_program(&p2), printed);
    }
}
