//! Sigma-guided A-normalization.
//!
//! Any statement that contains a Sigma-producing call gets its subexpressions
//! lifted into fresh `$`-bindings in evaluation order. A lifted Sigma value
//! `$sigmaN` additionally "opens" the block:
//!
//! ```text
//! val s = openSigma(f)
//! // becomes
//! val $sigmaN = openSigma(f)
//! implicit val $sigmaN_imp = $sigmaN.b
//! val s: $sigmaN.a.type = $sigmaN.a
//! ```
//!
//! so the capability component is available to implicit resolution and the
//! value component has a singleton type usable in path-dependent positions.
//!
//! The pass runs before type checking and decides Sigma-ness syntactically
//! from definition signatures. It is idempotent: `$`-prefixed bindings are
//! already in normal form and are left alone.

use std::collections::HashMap;

use crate::kernel::*;
use crate::span::Span;

pub fn anf_program(p: &KProgram) -> KProgram {
    let mut sigs: HashMap<String, Vec<SigInfo>> = HashMap::new();
    for d in &p.defs {
        sigs.entry(d.name.clone()).or_default().push(def_sig(d));
    }
    let mut a = Anf { sigs, locals: Vec::new(), counter: 0 };
    let mut out = p.clone();
    for d in &mut out.defs {
        if let Some(body) = &mut d.body {
            *body = a.transform_body(body.clone());
        }
    }
    for v in &mut out.vals {
        v.init = a.transform_body(v.init.clone());
    }
    out
}

#[derive(Clone, Copy)]
struct SigInfo {
    arity: usize,
    sigma_ret: bool,
}

/// Call-site signature of a definition: how many explicit arguments select it,
/// and whether the fully-applied result (after the checker supplies trailing
/// implicit arguments) is a Sigma bundle.
fn def_sig(d: &crate::kernel::KDef) -> SigInfo {
    let arity = d.params.iter().filter(|p| !p.implicit).count();
    let mut ret = &d.ret.ty;
    while let KType::DepFun { implicit: true, result, .. } = ret {
        ret = &result.ty;
    }
    SigInfo { arity, sigma_ret: matches!(ret, KType::Sigma { .. }) }
}

struct Anf {
    sigs: HashMap<String, Vec<SigInfo>>,
    /// Local definition signatures currently in scope.
    locals: Vec<(String, SigInfo)>,
    counter: u32,
}

impl Anf {
    fn fresh(&mut self) -> String {
        self.counter += 1;
        format!("$sigma{}", self.counter)
    }

    fn fresh_pre(&mut self) -> String {
        self.counter += 1;
        format!("$pre{}", self.counter)
    }

    fn sig_of(&self, name: &str) -> Vec<SigInfo> {
        let mut out: Vec<SigInfo> = self
            .locals
            .iter()
            .rev()
            .filter(|(n, _)| n == name)
            .map(|(_, s)| *s)
            .collect();
        if let Some(globals) = self.sigs.get(name) {
            out.extend(globals.iter().copied());
        }
        out
    }

    /// Is this expression a Sigma-producing call or literal?
    fn is_sigma_expr(&self, e: &KExpr) -> bool {
        match &e.kind {
            KExprKind::SigmaIntro { .. } => true,
            KExprKind::Ascribe { expr, .. } => self.is_sigma_expr(expr),
            KExprKind::Apply { .. } => {
                let (head, argc) = spine(e);
                let Some(name) = head else { return false };
                self.sig_of(name).iter().any(|s| s.sigma_ret && s.arity == argc)
            }
            _ => false,
        }
    }

    /// Does the expression contain a Sigma-producing call anywhere?
    fn contains_sigma(&self, e: &KExpr) -> bool {
        if self.is_sigma_expr(e) {
            return true;
        }
        match &e.kind {
            KExprKind::Select { base, .. } => self.contains_sigma(base),
            KExprKind::Apply { func, arg } => self.contains_sigma(func) || self.contains_sigma(arg),
            KExprKind::TyApply { func, .. } => self.contains_sigma(func),
            KExprKind::Lambda { .. } => false, // not evaluated here
            KExprKind::Block { stmts } => stmts.iter().any(|s| match s {
                KStmt::Let { init, .. } => self.contains_sigma(init),
                KStmt::Expr(e) => self.contains_sigma(e),
                KStmt::Def(_) => false,
            }),
            KExprKind::If { cond, then_branch, else_branch } => {
                self.contains_sigma(cond)
                    || self.contains_sigma(then_branch)
                    || else_branch.as_ref().is_some_and(|e| self.contains_sigma(e))
            }
            KExprKind::Ascribe { expr, .. } => self.contains_sigma(expr),
            KExprKind::Throw(inner) => self.contains_sigma(inner),
            KExprKind::SigmaIntro { .. } => true,
            _ => false,
        }
    }

    /// Transform a definition or val body.
    fn transform_body(&mut self, e: KExpr) -> KExpr {
        match e.kind {
            KExprKind::Block { .. } => self.expr(e),
            _ if self.contains_sigma(&e) => {
                let span = e.span.clone();
                self.expr(KExpr { kind: KExprKind::Block { stmts: vec![KStmt::Expr(e)] }, span })
            }
            _ => self.expr(e),
        }
    }

    /// Recurse through an expression, transforming nested blocks and bodies.
    fn expr(&mut self, e: KExpr) -> KExpr {
        let span = e.span.clone();
        let kind = match e.kind {
            KExprKind::Block { stmts } => {
                let scope = self.locals.len();
                let mut out = Vec::new();
                let n = stmts.len();
                for (i, s) in stmts.into_iter().enumerate() {
                    let tail = i + 1 == n;
                    self.stmt(s, tail, &mut out);
                }
                self.locals.truncate(scope);
                KExprKind::Block { stmts: out }
            }
            KExprKind::Lambda { param, ty, implicit, body } => KExprKind::Lambda {
                param,
                ty,
                implicit,
                body: Box::new(self.transform_body(*body)),
            },
            KExprKind::If { cond, then_branch, else_branch } => KExprKind::If {
                cond: Box::new(self.expr(*cond)),
                then_branch: Box::new(self.transform_body(*then_branch)),
                else_branch: else_branch.map(|e| Box::new(self.transform_body(*e))),
            },
            KExprKind::Apply { func, arg } => KExprKind::Apply {
                func: Box::new(self.expr(*func)),
                arg: Box::new(self.expr(*arg)),
            },
            KExprKind::TyApply { func, args } => {
                KExprKind::TyApply { func: Box::new(self.expr(*func)), args }
            }
            KExprKind::Select { base, field } => {
                KExprKind::Select { base: Box::new(self.expr(*base)), field }
            }
            KExprKind::Ascribe { expr, ty } => {
                KExprKind::Ascribe { expr: Box::new(self.expr(*expr)), ty }
            }
            KExprKind::Throw(inner) => KExprKind::Throw(Box::new(self.expr(*inner))),
            KExprKind::SigmaIntro { a_ty, b_ty, a, b } => KExprKind::SigmaIntro {
                a_ty,
                b_ty,
                a: Box::new(self.expr(*a)),
                b: Box::new(self.expr(*b)),
            },
            other => other,
        };
        KExpr { kind, span }
    }

    fn stmt(&mut self, s: KStmt, tail: bool, out: &mut Vec<KStmt>) {
        match s {
            KStmt::Def(mut d) => {
                self.locals.push((d.name.clone(), def_sig(&d)));
                if let Some(body) = d.body.take() {
                    d.body = Some(self.transform_body(body));
                }
                out.push(KStmt::Def(d));
            }
            KStmt::Let { implicit, name, ty, init, span } => {
                if name.starts_with('$') {
                    // Already in normal form.
                    out.push(KStmt::Let { implicit, name, ty, init: self.expr(init), span });
                    return;
                }
                if self.is_sigma_expr(&init) {
                    let init = self.lift_children(init, out);
                    let s = self.open_sigma(init, ty, &span, out);
                    out.push(KStmt::Let {
                        implicit,
                        name,
                        ty: Some(QType::plain(KType::Singleton(vec![s.clone(), "a".into()]))),
                        init: select(var(&s, &span), "a", &span),
                        span,
                    });
                } else if self.contains_sigma(&init) {
                    let init = self.lift_children(init, out);
                    out.push(KStmt::Let { implicit, name, ty, init, span });
                } else {
                    out.push(KStmt::Let { implicit, name, ty, init: self.expr(init), span });
                }
            }
            KStmt::Expr(e) => {
                if tail {
                    if self.is_sigma_expr(&e) || !self.contains_sigma(&e) {
                        // The block's value: leave the top node in place.
                        out.push(KStmt::Expr(self.expr(e)));
                    } else {
                        let e = self.lift_children(e, out);
                        out.push(KStmt::Expr(e));
                    }
                } else if self.is_sigma_expr(&e) {
                    let span = e.span.clone();
                    let e = self.lift_children(e, out);
                    self.open_sigma(e, None, &span, out);
                } else if self.contains_sigma(&e) {
                    let e = self.lift_children(e, out);
                    out.push(KStmt::Expr(e));
                } else {
                    out.push(KStmt::Expr(self.expr(e)));
                }
            }
        }
    }

    /// Bind a Sigma value and open it: an implicit binding for the capability
    /// component and the name of the pair binding for the caller.
    fn open_sigma(
        &mut self,
        init: KExpr,
        ty: Option<QType>,
        span: &Span,
        out: &mut Vec<KStmt>,
    ) -> String {
        let s = self.fresh();
        out.push(KStmt::Let { implicit: false, name: s.clone(), ty, init, span: span.clone() });
        out.push(KStmt::Let {
            implicit: true,
            name: format!("{s}_imp"),
            ty: None,
            init: select(var(&s, span), "b", span),
            span: span.clone(),
        });
        s
    }

    /// Normalize an expression's *children*, leaving the top node in place.
    /// Non-atomic subexpressions are hoisted to `$`-bindings in evaluation
    /// order; Sigma-producing subexpressions additionally open the block.
    fn lift_children(&mut self, e: KExpr, out: &mut Vec<KStmt>) -> KExpr {
        let span = e.span.clone();
        match e.kind {
            KExprKind::Apply { .. } | KExprKind::TyApply { .. } => {
                // Rebuild the application spine, lifting argument
                // computations but not the partial applications themselves.
                let mut cur = e;
                let mut parts = Vec::new();
                loop {
                    match cur.kind {
                        KExprKind::Apply { func, arg } => {
                            parts.push((Some(*arg), None, cur.span));
                            cur = *func;
                        }
                        KExprKind::TyApply { func, args } => {
                            parts.push((None, Some(args), cur.span));
                            cur = *func;
                        }
                        _ => break,
                    }
                }
                let mut node = match cur.kind {
                    KExprKind::Var(_) => cur,
                    _ => self.lift_atom(cur, out),
                };
                for (arg, targs, aspan) in parts.into_iter().rev() {
                    node = match (arg, targs) {
                        (Some(a), None) => {
                            let a = self.lift_atom(a, out);
                            KExpr {
                                kind: KExprKind::Apply { func: Box::new(node), arg: Box::new(a) },
                                span: aspan,
                            }
                        }
                        (None, Some(ts)) => KExpr {
                            kind: KExprKind::TyApply { func: Box::new(node), args: ts },
                            span: aspan,
                        },
                        _ => unreachable!(),
                    };
                }
                node
            }
            KExprKind::Select { base, field } => {
                let base = self.lift_atom(*base, out);
                select(base, &field, &span)
            }
            KExprKind::Ascribe { expr, ty } => {
                let inner = self.lift_children(*expr, out);
                KExpr { kind: KExprKind::Ascribe { expr: Box::new(inner), ty }, span }
            }
            KExprKind::Throw(inner) => {
                let inner = self.lift_atom(*inner, out);
                KExpr { kind: KExprKind::Throw(Box::new(inner)), span }
            }
            KExprKind::SigmaIntro { a_ty, b_ty, a, b } => {
                let a = self.lift_atom(*a, out);
                let b = self.lift_atom(*b, out);
                KExpr {
                    kind: KExprKind::SigmaIntro { a_ty, b_ty, a: Box::new(a), b: Box::new(b) },
                    span,
                }
            }
            KExprKind::Block { .. } | KExprKind::If { .. } | KExprKind::Lambda { .. } => {
                self.expr(KExpr { kind: e.kind, span })
            }
            other => KExpr { kind: other, span },
        }
    }

    /// Reduce an expression to an atom, hoisting it when necessary.
    fn lift_atom(&mut self, e: KExpr, out: &mut Vec<KStmt>) -> KExpr {
        let span = e.span.clone();
        match &e.kind {
            KExprKind::Unit
            | KExprKind::Bool(_)
            | KExprKind::Int(_)
            | KExprKind::Str(_)
            | KExprKind::Var(_)
            | KExprKind::Summon(_) => e,
            KExprKind::Lambda { .. } => self.expr(e),
            KExprKind::Select { .. } | KExprKind::Ascribe { .. } => self.lift_children(e, out),
            _ => {
                if self.is_sigma_expr(&e) {
                    let inner = self.lift_children(e, out);
                    let s = self.open_sigma(inner, None, &span, out);
                    var(&s, &span)
                } else {
                    let inner = self.lift_children(e, out);
                    let p = self.fresh_pre();
                    out.push(KStmt::Let {
                        implicit: false,
                        name: p.clone(),
                        ty: None,
                        init: inner,
                        span: span.clone(),
                    });
                    var(&p, &span)
                }
            }
        }
    }
}

fn var(name: &str, span: &Span) -> KExpr {
    KExpr { kind: KExprKind::Var(name.to_string()), span: span.clone() }
}

fn select(base: KExpr, field: &str, span: &Span) -> KExpr {
    KExpr {
        kind: KExprKind::Select { base: Box::new(base), field: field.to_string() },
        span: span.clone(),
    }
}

/// Head name and argument count of an application spine.
fn spine(e: &KExpr) -> (Option<&str>, usize) {
    let mut cur = e;
    let mut n = 0;
    loop {
        match &cur.kind {
            KExprKind::Apply { func, .. } => {
                n += 1;
                cur = func;
            }
            KExprKind::TyApply { func, .. } => cur = func,
            KExprKind::Var(x) => return (Some(x), n),
            _ => return (None, n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desugar::desugar_program;
    use crate::syntax::parse_program;

    fn anf(src: &str) -> KProgram {
        let p = parse_program("t.cap", src).unwrap();
        anf_program(&desugar_program(&p).unwrap())
    }

    const PRELUDE: &str = r#"
class File
class Cap
extern def openSigma(f: File): Sigma { type A = Unit; type B = f.IsOpen } = "file.openSigma"
extern def newFileSigma(): Sigma { type A = File^; type B = a.IsOpen } = "file.newSigma"
extern def readAll(f: File)(using c: f.IsOpen): Str = "file.read"
extern def printLine(s: Str): Unit = "io.print"
"#;

    fn body_stmts(p: &KProgram, name: &str) -> Vec<KStmt> {
        let d = p.def(name).unwrap();
        let KExprKind::Block { stmts } = &d.body.as_ref().unwrap().kind else {
            panic!("body is not a block")
        };
        stmts.clone()
    }

    #[test]
    fn sigma_val_is_opened() {
        let src = format!(
            "{PRELUDE}\ndef go(f: File): Unit = {{\n  val s = newFileSigma()\n  printLine(readAll(s))\n}}"
        );
        let p = anf(&src);
        let stmts = body_stmts(&p, "go");
        // val $sigmaN = ...; implicit val $sigmaN_imp = $sigmaN.b;
        // val s: $sigmaN.a.type = $sigmaN.a; tail
        assert_eq!(stmts.len(), 4);
        let KStmt::Let { name: n0, .. } = &stmts[0] else { panic!() };
        assert!(n0.starts_with("$sigma"));
        let KStmt::Let { implicit, name: n1, init, .. } = &stmts[1] else { panic!() };
        assert!(*implicit && n1.ends_with("_imp"));
        assert!(matches!(&init.kind, KExprKind::Select { field, .. } if field == "b"));
        let KStmt::Let { name: n2, ty, .. } = &stmts[2] else { panic!() };
        assert_eq!(n2, "s");
        let Some(QType { ty: KType::Singleton(path), .. }) = ty else { panic!("{ty:?}") };
        assert_eq!(path[1], "a");
    }

    #[test]
    fn statement_position_sigma_opens_without_alias() {
        // A discarded Sigma (state transition) opens the block but binds no
        // user-visible name.
        let src = format!(
            "{PRELUDE}\ndef go(f: File): Unit = {{\n  openSigma(f)\n  ()\n}}"
        );
        let p = anf(&src);
        let stmts = body_stmts(&p, "go");
        assert_eq!(stmts.len(), 3);
        let KStmt::Let { name, .. } = &stmts[0] else { panic!() };
        assert!(name.starts_with("$sigma"));
        let KStmt::Let { implicit: true, .. } = &stmts[1] else { panic!() };
    }

    #[test]
    fn evaluation_order_is_preserved() {
        // printLine(...) evaluates before the lifted Sigma call.
        let src = format!(
            "{PRELUDE}\ndef go(f: File): Unit = {{\n  use2(printLine(\"a\"), openSigma(f))\n  ()\n}}\nextern def use2(u: Unit, s: Sigma {{ type A = Unit; type B = f.IsOpen }}): Unit = \"io.print\""
        );
        let p = anf(&src);
        let stmts = body_stmts(&p, "go");
        // $pre (printLine), $sigma, $sigma_imp, use2 app, tail unit
        let names: Vec<String> = stmts
            .iter()
            .filter_map(|s| match s {
                KStmt::Let { name, .. } => Some(name.clone()),
                _ => None,
            })
            .collect();
        assert!(names[0].starts_with("$pre"), "{names:?}");
        assert!(names[1].starts_with("$sigma"), "{names:?}");
    }

    #[test]
    fn idempotent() {
        let src = format!(
            "{PRELUDE}\ndef go(f: File): Unit = {{\n  val s = newFileSigma()\n  openSigma(s)\n  ()\n}}"
        );
        let p = anf(&src);
        let once = print_program(&p);
        let twice = print_program(&anf_program(&p));
        assert_eq!(once, twice);
    }

    #[test]
    fn non_sigma_code_untouched() {
        let src = format!(
            "{PRELUDE}\ndef go(f: File): Str = {{\n  val x = readAll(f)\n  printLine(x)\n  x\n}}"
        );
        let p = anf(&src);
        let stmts = body_stmts(&p, "go");
        assert_eq!(stmts.len(), 3);
        assert!(stmts.iter().all(|s| match s {
            KStmt::Let { name, .. } => !name.starts_with('$'),
            _ => true,
        }));
    }

    #[test]
    fn tail_sigma_left_in_place() {
        let src = format!(
            "{PRELUDE}\ndef pass(f: File): Sigma {{ type A = Unit; type B = f.IsOpen }} = {{\n  openSigma(f)\n}}"
        );
        let p = anf(&src);
        let stmts = body_stmts(&p, "pass");
        assert_eq!(stmts.len(), 1);
        assert!(matches!(&stmts[0], KStmt::Expr(_)));
    }
}
