//! Bidirectional type and effect checker.
//!
//! Checking is flow-sensitive: an [`EffectState`] accumulates the kill sets
//! released by applications, and every variable use must be transitively
//! disjoint from it. Implicit arguments are resolved innermost-scope-first;
//! by default, candidates whose saturated qualifier overlaps the killed set
//! are filtered out (disable with `scala_compat` for the classic behavior).

use std::collections::{BTreeSet, HashMap};

use crate::diag::{Code, Diagnostic};
use crate::effects::EffectState;
use crate::kernel::*;
use crate::span::Span;
use crate::types::{
    is_subtype, paths_equal, shape_equal, subst_kill, subst_qvars, subst_type, subst_tyvars, Ctx,
    Globals, Subst,
};

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Disable killed-candidate filtering during implicit resolution.
    pub scala_compat: bool,
    /// Disable flow-sensitive kill tracking entirely.
    pub no_effect_check: bool,
}

pub fn check_program(p: &KProgram, opts: &Options) -> (Globals, Vec<Diagnostic>) {
    let g = Globals::from_program(p);
    let mut diags = Vec::new();

    for tf in &p.typefuns {
        if let Err(msg) = g.check_typefun(tf) {
            diags.push(Diagnostic::new(Code::E_TYPEFUN_STUCK, tf.span.clone(), msg));
        }
    }
    for c in &p.classes {
        check_class(&g, c, &mut diags);
    }

    // Signatures first: every definition's types must be well formed even if
    // its body is not checked (externs).
    for d in &p.defs {
        let mut t = Typer::new(&g, p, opts);
        if let Err(e) = t.validate_def_signature(d) {
            diags.push(e);
            continue;
        }
        if d.body.is_some() {
            if let Err(e) = t.check_def_body(d) {
                diags.push(e);
            }
        }
    }

    // Top-level vals share one sequential context and effect state.
    {
        let mut t = Typer::new(&g, p, opts);
        for v in &p.vals {
            if let Err(e) = t.check_val(v) {
                diags.push(e);
                break;
            }
        }
    }

    crate::diag::sort_diags(&mut diags);
    (g, diags)
}

fn check_class(g: &Globals, c: &KClass, diags: &mut Vec<Diagnostic>) {
    if let Some(KType::Named { name, .. }) = &c.parent {
        if !g.classes.contains_key(name) {
            diags.push(Diagnostic::new(
                Code::E_UNBOUND,
                c.span.clone(),
                format!("unknown parent class `{name}`"),
            ));
        }
    }
    for n in &c.nested {
        check_class(g, n, diags);
    }
}

/// One generic instantiation: the metavariables it introduced and the context
/// mark used for qualifier scope checking.
struct Inst {
    tymetas: Vec<(String, Option<KType>)>,
    qmetas: Vec<String>,
}

pub struct Typer<'a> {
    g: &'a Globals,
    prog: &'a KProgram,
    opts: &'a Options,
    pub ctx: Ctx,
    pub fx: EffectState,
    /// Type variables currently opaque (enclosing `[T]` parameters).
    tyvars: Vec<String>,
    meta_counter: u32,
    solutions: HashMap<String, QType>,
    qsolutions: HashMap<String, Qualifier>,
    meta_marks: HashMap<String, usize>,
}

type TResult<T> = Result<T, Diagnostic>;

fn is_meta(name: &str) -> bool {
    name.starts_with('?')
}

/// Does this shape carry reachability information?
fn tracked(ty: &KType) -> bool {
    !matches!(ty, KType::Prim(_) | KType::Nat(_))
}

/// The syntactic path of an expression, if it has one.
fn path_of(e: &KExpr) -> Option<Path> {
    match &e.kind {
        KExprKind::Var(x) => Some(vec![x.clone()]),
        KExprKind::Select { base, field } => {
            let mut p = path_of(base)?;
            p.push(field.clone());
            Some(p)
        }
        KExprKind::Ascribe { expr, .. } => path_of(expr),
        _ => None,
    }
}

/// Free term variables of an expression (mention approximation).
pub fn free_vars(e: &KExpr) -> BTreeSet<String> {
    fn go(e: &KExpr, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match &e.kind {
            KExprKind::Var(x) => {
                if !bound.iter().any(|b| b == x) {
                    out.insert(x.clone());
                }
            }
            KExprKind::Select { base, .. } => go(base, bound, out),
            KExprKind::Apply { func, arg } => {
                go(func, bound, out);
                go(arg, bound, out);
            }
            KExprKind::TyApply { func, .. } => go(func, bound, out),
            KExprKind::Lambda { param, body, .. } => {
                bound.push(param.clone());
                go(body, bound, out);
                bound.pop();
            }
            KExprKind::Block { stmts } => {
                let n = bound.len();
                for s in stmts {
                    match s {
                        KStmt::Let { name, init, .. } => {
                            go(init, bound, out);
                            bound.push(name.clone());
                        }
                        KStmt::Def(d) => {
                            bound.push(d.name.clone());
                            if let Some(b) = &d.body {
                                let mut inner = bound.clone();
                                inner.extend(d.params.iter().map(|p| p.name.clone()));
                                go(b, &mut inner, out);
                            }
                        }
                        KStmt::Expr(e) => go(e, bound, out),
                    }
                }
                bound.truncate(n);
            }
            KExprKind::If { cond, then_branch, else_branch } => {
                go(cond, bound, out);
                go(then_branch, bound, out);
                if let Some(e) = else_branch {
                    go(e, bound, out);
                }
            }
            KExprKind::Ascribe { expr, .. } => go(expr, bound, out),
            KExprKind::Throw(inner) => go(inner, bound, out),
            KExprKind::SigmaIntro { a, b, .. } => {
                go(a, bound, out);
                go(b, bound, out);
            }
            _ => {}
        }
    }
    let mut out = BTreeSet::new();
    go(e, &mut Vec::new(), &mut out);
    out
}

impl<'a> Typer<'a> {
    pub fn new(g: &'a Globals, prog: &'a KProgram, opts: &'a Options) -> Typer<'a> {
        Typer {
            g,
            prog,
            opts,
            ctx: Ctx::new(),
            fx: EffectState::new(!opts.no_effect_check),
            tyvars: Vec::new(),
            meta_counter: 0,
            solutions: HashMap::new(),
            qsolutions: HashMap::new(),
            meta_marks: HashMap::new(),
        }
    }

    fn err(&self, code: Code, span: &Span, msg: impl Into<String>) -> Diagnostic {
        Diagnostic::new(code, span.clone(), msg)
    }

    // -- metavariables ------------------------------------------------------

    fn fresh_meta(&mut self, base: &str) -> String {
        self.meta_counter += 1;
        format!("?{base}{}", self.meta_counter)
    }

    /// Apply current metavariable solutions throughout a type.
    fn resolve(&self, t: &QType) -> QType {
        let mut cur = t.clone();
        for _ in 0..8 {
            let next = subst_qvars(&subst_tyvars(&cur, &self.solutions), &self.qsolutions);
            if next == cur {
                break;
            }
            cur = next;
        }
        cur
    }

    fn normalize(&self, t: &QType, span: &Span) -> TResult<QType> {
        self.g.normalize(&self.resolve(t)).map_err(|e| match e {
            crate::types::NormError::Stuck { name, arg } => self.err(
                Code::E_TYPEFUN_STUCK,
                span,
                format!("type function `{name}` does not reduce on `{arg}`"),
            ),
        })
    }

    fn solve_qmeta(&mut self, name: &str, q: Qualifier, span: &Span) -> TResult<()> {
        let mark = self.meta_marks.get(name).copied().unwrap_or(0);
        for v in &q.vars {
            let idx = self
                .ctx
                .entries
                .iter()
                .rposition(|b| &b.name == v);
            let escapes = match idx {
                Some(i) => i >= mark,
                None => true,
            };
            if escapes {
                return Err(self.err(
                    Code::E_SUBQUAL,
                    span,
                    format!(
                        "qualifier parameter would capture `{v}`, which is not in scope at the call site"
                    ),
                ));
            }
        }
        self.qsolutions.insert(name.to_string(), q);
        Ok(())
    }

    /// Unify `actual` against an `expected` type that may contain
    /// metavariables; falls back to a subtype check when ground.
    fn unify(&mut self, actual: &QType, expected: &QType, span: &Span) -> TResult<()> {
        let a = self.normalize(actual, span)?;
        let ex = self.normalize(expected, span)?;

        // Qualifier metavariables solve from the actual qualifier.
        let open_qmetas: Vec<String> =
            ex.qual.qvars.iter().filter(|v| is_meta(v)).cloned().collect();
        if let Some(qm) = open_qmetas.first() {
            let mut sol = a.qual.clone();
            for v in ex.qual.vars.iter() {
                sol.vars.remove(v);
            }
            sol.qvars.clear();
            self.solve_qmeta(qm, sol, span)?;
        } else {
            // Ground expected qualifier: enforce it here, since the shape
            // cases below only compare structure.
            let exq = self.resolve(&ex).qual;
            let ok = if exq.untracked {
                self.ctx.subqual(&a.qual, &Qualifier::default())
            } else if exq.is_empty() {
                true
            } else {
                self.ctx.subqual(&a.qual, &exq)
            };
            if !ok {
                return Err(self.mismatch(&a, &self.resolve(&ex), span));
            }
        }

        match (&a.ty, &ex.ty) {
            (_, KType::Var(v)) if is_meta(v) => {
                if let Some(sol) = self.solutions.get(v).cloned() {
                    return self.unify(&a, &sol, span);
                }
                self.solutions.insert(v.clone(), QType::plain(a.ty.clone()));
                Ok(())
            }
            (KType::Var(v), _) if is_meta(v) => {
                if let Some(sol) = self.solutions.get(v).cloned() {
                    return self.unify(&sol, &ex, span);
                }
                self.solutions.insert(v.clone(), QType::plain(ex.ty.clone()));
                Ok(())
            }
            (
                KType::Named { name: n1, args: a1 },
                KType::Named { name: n2, args: a2 },
            ) if n1 == n2 && a1.len() == a2.len() => {
                for (x, y) in a1.iter().zip(a2) {
                    self.unify(x, y, span)?;
                }
                Ok(())
            }
            (
                KType::PathMember { path: p1, member: m1, args: a1 },
                KType::PathMember { path: p2, member: m2, args: a2 },
            ) if m1 == m2 && paths_equal(&self.ctx, p1, p2) && a1.len() == a2.len() => {
                for (x, y) in a1.iter().zip(a2) {
                    self.unify(x, y, span)?;
                }
                Ok(())
            }
            (
                KType::DepFun { binder: b1, param: p1, result: r1, .. },
                KType::DepFun { binder: b2, param: p2, result: r2, .. },
            ) => {
                self.unify(p2, p1, span)?;
                let s = Subst {
                    binder: b2.clone(),
                    path: Some(vec![b1.clone()]),
                    qual: Qualifier::var(b1.clone()),
                };
                let r2 = subst_type(r2, &s).map_err(|e| self.subst_err(&e, span))?;
                self.unify(r1, &r2, span)
            }
            (KType::Sigma { binder: b1, a: a1, b: c1 }, KType::Sigma { binder: b2, a: a2, b: c2 }) => {
                self.unify(a1, a2, span)?;
                let s = Subst {
                    binder: b2.clone(),
                    path: Some(vec![b1.clone()]),
                    qual: Qualifier::var(b1.clone()),
                };
                let c2 = subst_type(c2, &s).map_err(|e| self.subst_err(&e, span))?;
                self.unify(c1, &c2, span)
            }
            _ => {
                let ex = self.resolve(&ex);
                if is_subtype(self.g, &self.ctx, &a, &ex) {
                    Ok(())
                } else {
                    Err(self.mismatch(&a, &ex, span))
                }
            }
        }
    }

    fn mismatch(&self, actual: &QType, expected: &QType, span: &Span) -> Diagnostic {
        if let (
            KType::PathMember { path: p1, member: m1, .. },
            KType::PathMember { path: p2, member: m2, .. },
        ) = (&actual.ty, &expected.ty)
        {
            if m1 == m2 && self.ctx.resolve_path(p1) != self.ctx.resolve_path(p2) {
                return self.err(
                    Code::E_PATH_MISMATCH,
                    span,
                    format!(
                        "capability is for `{}`, but one for `{}` is required",
                        path_str(p1),
                        path_str(p2)
                    ),
                );
            }
        }
        if !shape_equal(&self.ctx, &actual.ty, &expected.ty) {
            self.err(
                Code::E_TYPE_MISMATCH,
                span,
                format!("expected `{expected}`, found `{actual}`"),
            )
        } else {
            self.err(
                Code::E_SUBQUAL,
                span,
                format!(
                    "value reaching {} cannot flow into a position expecting {}",
                    actual.qual, expected.qual
                ),
            )
        }
    }

    fn subst_err(&self, e: &crate::types::SubstError, span: &Span) -> Diagnostic {
        self.err(
            Code::E_SUBST_PATH,
            span,
            format!(
                "dependent result mentions `{}`, but the argument has no path; bind it to a name first",
                path_str(&e.path)
            ),
        )
    }

    // -- signature validation -----------------------------------------------

    pub fn validate_def_signature(&mut self, d: &KDef) -> TResult<()> {
        self.ctx.push_scope();
        for tp in &d.typarams {
            self.tyvars.push(tp.name.clone());
            if let Some(b) = &tp.bound {
                self.validate_type(&QType::plain(b.clone()), &d.span)?;
            }
        }
        for p in &d.params {
            self.validate_type(&p.ty, &p.span)?;
            self.normalize(&p.ty, &p.span)?;
            self.ctx.bind(p.name.clone(), p.ty.clone(), p.implicit, p.span.clone());
        }
        self.validate_type(&d.ret, &d.span)?;
        self.normalize(&d.ret, &d.span)?;
        for k in &d.kill.vars {
            if self.ctx.lookup(k).is_none() {
                let e = self.err(
                    Code::E_KILL_UNDECLARED,
                    &d.span,
                    format!("`@kill({k})` names no parameter of `{}`", d.name),
                );
                self.pop_def_scope(d);
                return Err(e);
            }
        }
        self.pop_def_scope(d);
        Ok(())
    }

    fn pop_def_scope(&mut self, d: &KDef) {
        self.tyvars.truncate(self.tyvars.len() - d.typarams.len());
        self.ctx.pop_scope();
    }

    fn validate_type(&mut self, t: &QType, span: &Span) -> TResult<()> {
        match &t.ty {
            KType::Prim(_) | KType::Nat(_) | KType::Var(_) => Ok(()),
            KType::Named { name, args } => {
                if name != "::" && !self.g.classes.contains_key(name) && !self.tyvars.contains(name)
                {
                    return Err(self.err(Code::E_UNBOUND, span, format!("unknown type `{name}`")));
                }
                // Bound checks for class type arguments.
                if let Some(sig) = self.g.classes.get(name) {
                    for (tp, arg) in sig.decl.typarams.iter().zip(args.iter()) {
                        if let Some(bound) = &tp.bound {
                            self.check_bound(arg, bound, span)?;
                        }
                    }
                }
                for a in args {
                    self.validate_type(a, span)?;
                }
                Ok(())
            }
            KType::TypeFun { name, args } => {
                if !self.g.typefuns.contains_key(name) {
                    return Err(self.err(Code::E_UNBOUND, span, format!("unknown type function `{name}`")));
                }
                for a in args {
                    self.validate_type(a, span)?;
                }
                Ok(())
            }
            KType::PathMember { path, member, args } => {
                let root = &path[0];
                let Some(b) = self.ctx.lookup(root) else {
                    return Err(self.err(
                        Code::E_UNBOUND,
                        span,
                        format!("unknown variable `{root}` in path type `{}`", path_str(path)),
                    ));
                };
                // Validate the member against the root's class when known.
                if let KType::Named { name, .. } = &b.ty.ty {
                    if path.len() == 1 && !self.class_has_member(name, member) {
                        return Err(self.err(
                            Code::E_UNBOUND,
                            span,
                            format!("class `{name}` has no capability member `{member}`"),
                        ));
                    }
                }
                for a in args {
                    self.validate_type(a, span)?;
                }
                Ok(())
            }
            KType::Singleton(path) => {
                if self.ctx.lookup(&path[0]).is_none() {
                    return Err(self.err(
                        Code::E_UNBOUND,
                        span,
                        format!("unknown variable `{}` in singleton type", path[0]),
                    ));
                }
                Ok(())
            }
            KType::Project { class, member } => {
                let ok = self
                    .g
                    .classes
                    .get(member)
                    .is_some_and(|sig| sig.owner.as_deref() == Some(class.as_str()));
                if !ok {
                    return Err(self.err(
                        Code::E_UNBOUND,
                        span,
                        format!("`{class}` has no nested class `{member}`"),
                    ));
                }
                Ok(())
            }
            KType::DepFun { binder, param, result, kill, .. } => {
                self.validate_type(param, span)?;
                self.ctx.push_scope();
                self.ctx.bind(binder.clone(), (**param).clone(), false, span.clone());
                let r = self.validate_type(result, span);
                let r = r.and_then(|_| {
                    for k in &kill.vars {
                        if self.ctx.lookup(k).is_none() {
                            return Err(self.err(
                                Code::E_KILL_UNDECLARED,
                                span,
                                format!("`@kill({k})` names an unbound variable"),
                            ));
                        }
                    }
                    Ok(())
                });
                self.ctx.pop_scope();
                r
            }
            KType::Sigma { binder, a, b } => {
                self.validate_type(a, span)?;
                self.ctx.push_scope();
                self.ctx.bind(binder.clone(), (**a).clone(), false, span.clone());
                let r = self.validate_type(b, span);
                self.ctx.pop_scope();
                r
            }
        }
    }

    fn class_has_member(&self, class: &str, member: &str) -> bool {
        for c in self.g.parents(class) {
            if let Some(sig) = self.g.classes.get(&c) {
                if sig.decl.type_members.iter().any(|(m, _)| m == member) {
                    return true;
                }
            }
        }
        false
    }

    fn check_bound(&mut self, arg: &QType, bound: &KType, span: &Span) -> TResult<()> {
        // Opaque arguments (type variables, metas) are checked when solved.
        if matches!(arg.ty, KType::Var(_)) {
            return Ok(());
        }
        if !is_subtype(self.g, &self.ctx, arg, &QType::plain(bound.clone())) {
            return Err(self.err(
                Code::E_BOUND,
                span,
                format!("type argument `{arg}` does not satisfy bound `{bound}`"),
            ));
        }
        Ok(())
    }

    // -- declarations -------------------------------------------------------

    pub fn check_def_body(&mut self, d: &KDef) -> TResult<()> {
        let body = d.body.as_ref().expect("def has body");
        self.ctx.push_scope();
        for tp in &d.typarams {
            self.tyvars.push(tp.name.clone());
        }
        for p in &d.params {
            self.ctx.bind(p.name.clone(), p.ty.clone(), p.implicit, p.span.clone());
        }
        let saved_fx = std::mem::replace(&mut self.fx, EffectState::new(!self.opts.no_effect_check));
        let entry_names: BTreeSet<String> = d.params.iter().map(|p| p.name.clone()).collect();

        let result = self.check(body, &d.ret);

        let fx = std::mem::replace(&mut self.fx, saved_fx);
        let outcome = result.and_then(|_| {
            // Latent-effect honesty: kills that touch parameters must be
            // declared on the signature.
            let declared = self.ctx.saturate_kill(&d.kill);
            for v in &fx.killed.vars {
                if entry_names.contains(v) && !declared.vars.contains(v) {
                    return Err(self.err(
                        Code::E_KILL_UNDECLARED,
                        fx.killed_span(v).unwrap_or(&d.span),
                        format!("`{}` kills `{v}` but does not declare `@kill({v})`", d.name),
                    ));
                }
            }
            if fx.killed.fun && !d.kill.fun {
                return Err(self.err(
                    Code::E_KILL_UNDECLARED,
                    &d.span,
                    format!("`{}` consumes a one-shot function but does not declare `@kill(FUN)`", d.name),
                ));
            }
            Ok(())
        });
        self.pop_def_scope(d);
        outcome
    }

    pub fn check_val(&mut self, v: &KVal) -> TResult<()> {
        let t = match &v.ty {
            Some(ann) => {
                self.validate_type(ann, &v.span)?;
                self.check_let_annotated(&v.init, ann, &v.span)?
            }
            None => self.infer(&v.init)?,
        };
        self.bind_let(&v.name, t, v.implicit, &v.init, &v.span);
        Ok(())
    }

    fn check_let_annotated(&mut self, init: &KExpr, ann: &QType, span: &Span) -> TResult<QType> {
        if let KType::Singleton(p) = &ann.ty {
            // `val f: s.a.type = s.a` — the initializer must be that path.
            let Some(ip) = path_of(init) else {
                return Err(self.err(
                    Code::E_PATH_MISMATCH,
                    span,
                    "a singleton-typed binding must be initialized with its path",
                ));
            };
            if self.ctx.resolve_path(&ip) != self.ctx.resolve_path(p) {
                return Err(self.err(
                    Code::E_PATH_MISMATCH,
                    span,
                    format!("initializer path `{}` is not `{}`", path_str(&ip), path_str(p)),
                ));
            }
            return self.infer(init);
        }
        let actual = self.check(init, ann)?;
        // Keep the inferred reachability; the annotation constrains the shape.
        Ok(QType { ty: actual.ty, qual: actual.qual })
    }

    fn bind_let(&mut self, name: &str, t: QType, implicit: bool, init: &KExpr, span: &Span) {
        if let Some(p) = path_of(init) {
            if implicit {
                self.ctx.bind(name.to_string(), t, true, span.clone());
                // Implicit bindings can still alias a path; record it for
                // path-equality checks by rebinding with the alias.
                if let Some(b) = self.ctx.entries.last_mut() {
                    b.alias = Some(p);
                }
            } else {
                self.ctx.bind_alias(name.to_string(), t, p, span.clone());
            }
        } else {
            self.ctx.bind(name.to_string(), t, implicit, span.clone());
        }
    }

    // -- expressions --------------------------------------------------------

    pub fn infer(&mut self, e: &KExpr) -> TResult<QType> {
        self.infer_expecting(e, None)
    }

    pub fn check(&mut self, e: &KExpr, expected: &QType) -> TResult<QType> {
        let expected = self.normalize(expected, &e.span)?;
        match (&e.kind, &expected.ty) {
            // Implicit function expected, non-implicit term given: auto-wrap.
            (_, KType::DepFun { binder, implicit: true, param, result, kill })
                if !matches!(&e.kind, KExprKind::Lambda { implicit: true, .. }) =>
            {
                self.ctx.push_scope();
                self.ctx.bind(binder.clone(), (**param).clone(), true, e.span.clone());
                let saved = std::mem::replace(&mut self.fx, EffectState::new(!self.opts.no_effect_check));
                let r = self.check(e, result);
                let inner_fx = std::mem::replace(&mut self.fx, saved);
                let r = r.and_then(|_| self.check_latent_declared(&inner_fx, kill, &e.span));
                self.ctx.pop_scope();
                r?;
                return Ok(expected.clone());
            }
            (KExprKind::Lambda { param, ty, implicit, body }, KType::DepFun { .. }) => {
                let KType::DepFun {
                    binder,
                    implicit: want_implicit,
                    param: want_param,
                    result,
                    kill,
                } = &expected.ty
                else {
                    unreachable!()
                };
                if *implicit && !want_implicit {
                    return Err(self.mismatch(
                        &QType::plain(KType::named("<implicit function>")),
                        &expected,
                        &e.span,
                    ));
                }
                let param_ty = match ty {
                    Some(ann) => {
                        self.validate_type(ann, &e.span)?;
                        self.unify(ann, want_param, &e.span)?;
                        ann.clone()
                    }
                    None => self.resolve(want_param),
                };
                self.ctx.push_scope();
                self.ctx.bind(param.clone(), param_ty, *want_implicit, e.span.clone());
                let saved = std::mem::replace(&mut self.fx, EffectState::new(!self.opts.no_effect_check));
                // The declared result may mention the declared binder; rename
                // it to the lambda's own parameter.
                let s = Subst {
                    binder: binder.clone(),
                    path: Some(vec![param.clone()]),
                    qual: Qualifier::var(param.clone()),
                };
                let want_result =
                    subst_type(result, &s).map_err(|er| self.subst_err(&er, &e.span))?;
                let r = self.check(body, &want_result);
                let inner_fx = std::mem::replace(&mut self.fx, saved);
                let kill = subst_kill(kill, &s);
                let r =
                    r.and_then(|_| self.check_latent_declared(&inner_fx, &kill, &e.span));
                self.ctx.pop_scope();
                r?;
                let mut out = self.resolve(&expected);
                out.qual = out.qual.union(&self.capture_qual(e));
                return Ok(out);
            }
            (KExprKind::If { cond, then_branch, else_branch }, _) => {
                let c = self.infer(cond)?;
                self.unify(&c, &QType::plain(KType::Prim(PrimTy::Bool)), &cond.span)?;
                let mut then_fx = self.fx.clone();
                std::mem::swap(&mut self.fx, &mut then_fx);
                let t1 = self.check(then_branch, &expected)?;
                std::mem::swap(&mut self.fx, &mut then_fx);
                if let Some(eb) = else_branch {
                    let else_fx = self.fx.clone();
                    let saved = std::mem::replace(&mut self.fx, else_fx);
                    self.check(eb, &expected)?;
                    let else_fx = std::mem::replace(&mut self.fx, saved);
                    self.fx = then_fx;
                    self.fx.join(else_fx);
                } else {
                    self.fx = then_fx;
                }
                return Ok(t1);
            }
            (KExprKind::Block { .. }, _) => {
                return self.infer_block(e, Some(&expected));
            }
            (KExprKind::Throw(_), _) => {
                self.infer(e)?;
                return Ok(QType::plain(KType::Prim(PrimTy::Nothing)));
            }
            _ => {}
        }
        let actual = self.infer_expecting(e, Some(&expected))?;
        self.unify(&actual, &expected, &e.span)?;
        Ok(actual)
    }

    fn check_latent_declared(
        &mut self,
        inner: &EffectState,
        declared: &KillSet,
        span: &Span,
    ) -> TResult<()> {
        // Kills a function body performs on variables from enclosing scopes
        // must be covered by the arrow's declared kill set.
        let declared = self.ctx.saturate_kill(declared);
        if declared.fun {
            // A one-shot arrow consumes everything it captures when applied,
            // so any kill of an outer variable is already accounted for.
            return Ok(());
        }
        for v in &inner.killed.vars {
            let outer = self.ctx.lookup(v).is_some();
            if outer && !declared.vars.contains(v) {
                return Err(self.err(
                    Code::E_KILL_UNDECLARED,
                    inner.killed_span(v).unwrap_or(span),
                    format!("function kills `{v}` but its type does not declare `@kill({v})`"),
                ));
            }
        }
        Ok(())
    }

    /// Mention approximation: a function value reaches every tracked outer
    /// variable its body mentions.
    fn capture_qual(&self, e: &KExpr) -> Qualifier {
        let mut q = Qualifier::empty();
        for v in free_vars(e) {
            if let Some(b) = self.ctx.lookup(&v) {
                if tracked(&b.ty.ty) {
                    q.vars.insert(v);
                }
            }
        }
        q
    }

    fn infer_expecting(&mut self, e: &KExpr, expected: Option<&QType>) -> TResult<QType> {
        match &e.kind {
            KExprKind::Unit => Ok(QType::unit()),
            KExprKind::Bool(_) => Ok(QType::plain(KType::Prim(PrimTy::Bool))),
            KExprKind::Int(_) => Ok(QType::plain(KType::Prim(PrimTy::Int))),
            KExprKind::Str(_) => Ok(QType::plain(KType::Prim(PrimTy::Str))),
            KExprKind::Var(_) | KExprKind::Apply { .. } | KExprKind::TyApply { .. } => {
                self.infer_spine(e, expected)
            }
            KExprKind::Select { .. } => self.infer_select(e),
            KExprKind::Lambda { param, ty, implicit, body } => {
                let Some(ann) = ty else {
                    return Err(self.err(
                        Code::E_TYPE_MISMATCH,
                        &e.span,
                        format!("cannot infer the type of parameter `{param}`; annotate it"),
                    ));
                };
                self.validate_type(ann, &e.span)?;
                self.ctx.push_scope();
                self.ctx.bind(param.clone(), ann.clone(), *implicit, e.span.clone());
                let saved = std::mem::replace(&mut self.fx, EffectState::new(!self.opts.no_effect_check));
                let body_ty = self.infer(body);
                let inner_fx = std::mem::replace(&mut self.fx, saved);
                self.ctx.pop_scope();
                let body_ty = body_ty?;
                // The body's latent kills become the arrow's kill set.
                let mut kill = KillSet::empty();
                for v in &inner_fx.killed.vars {
                    if v == param || self.ctx.lookup(v).is_some() {
                        kill.vars.insert(v.clone());
                    }
                }
                kill.fun |= inner_fx.killed.fun;
                Ok(QType {
                    ty: KType::DepFun {
                        binder: param.clone(),
                        implicit: *implicit,
                        param: Box::new(ann.clone()),
                        result: Box::new(body_ty),
                        kill,
                    },
                    qual: self.capture_qual(e),
                })
            }
            KExprKind::Block { .. } => self.infer_block(e, None),
            KExprKind::If { .. } => {
                // Infer the then-branch's type and check the else against it.
                let KExprKind::If { cond, then_branch, else_branch } = &e.kind else {
                    unreachable!()
                };
                let c = self.infer(cond)?;
                self.unify(&c, &QType::plain(KType::Prim(PrimTy::Bool)), &cond.span)?;
                let mut then_fx = self.fx.clone();
                std::mem::swap(&mut self.fx, &mut then_fx);
                let t1 = self.infer(then_branch)?;
                std::mem::swap(&mut self.fx, &mut then_fx);
                match else_branch {
                    None => {
                        self.fx = then_fx;
                        Ok(QType::unit())
                    }
                    Some(eb) => {
                        let pre = self.fx.clone();
                        let saved = std::mem::replace(&mut self.fx, pre);
                        let t2 = self.infer(eb)?;
                        let else_fx = std::mem::replace(&mut self.fx, saved);
                        self.fx = then_fx;
                        self.fx.join(else_fx);
                        if t1.ty == KType::Prim(PrimTy::Nothing) {
                            return Ok(t2);
                        }
                        if t2.ty != KType::Prim(PrimTy::Nothing) {
                            self.unify(&t2, &t1, &eb.span)?;
                        }
                        Ok(QType { ty: t1.ty, qual: t1.qual.union(&t2.qual) })
                    }
                }
            }
            KExprKind::Summon(target) => {
                self.validate_type(target, &e.span)?;
                let target = self.normalize(target, &e.span)?;
                let (name, _) = self.resolve_implicit(&target, &e.span)?;
                Ok(QType { ty: target.ty, qual: Qualifier::var(name) })
            }
            KExprKind::Ascribe { expr, ty } => {
                self.validate_type(ty, &e.span)?;
                self.check(expr, ty)
            }
            KExprKind::Throw(inner) => {
                let t = self.infer(inner)?;
                if tracked(&t.ty) {
                    return Err(self.err(
                        Code::E_ESCAPE,
                        &e.span,
                        format!("a value of tracked type `{t}` cannot escape via `throw`"),
                    ));
                }
                Ok(QType::plain(KType::Prim(PrimTy::Nothing)))
            }
            KExprKind::SigmaIntro { a_ty, b_ty, a, b } => {
                let at = match a_ty {
                    Some(t) => {
                        self.validate_type(t, &e.span)?;
                        self.check(a, t)?
                    }
                    None => self.infer(a)?,
                };
                let a_path = path_of(a);
                let bt = match b_ty {
                    Some(t) => {
                        // B may mention the first component under the binder
                        // `a`; instantiate it with the actual path.
                        self.ctx.push_scope();
                        self.ctx.bind("a", at.clone(), false, a.span.clone());
                        self.validate_type(t, &e.span)?;
                        self.ctx.pop_scope();
                        let inst = match &a_path {
                            Some(p) => subst_type(
                                t,
                                &Subst {
                                    binder: "a".into(),
                                    path: Some(p.clone()),
                                    qual: at.qual.clone(),
                                },
                            )
                            .map_err(|er| self.subst_err(&er, &e.span))?,
                            None => t.clone(),
                        };
                        self.check(b, &inst)?;
                        t.clone()
                    }
                    None => self.infer(b)?,
                };
                let a_decl = a_ty.clone().unwrap_or_else(|| at.clone());
                Ok(QType {
                    ty: KType::Sigma {
                        binder: "a".into(),
                        a: Box::new(a_decl),
                        b: Box::new(bt),
                    },
                    qual: Qualifier::fresh(),
                })
            }
        }
    }

    fn infer_select(&mut self, e: &KExpr) -> TResult<QType> {
        let KExprKind::Select { base, field } = &e.kind else { unreachable!() };
        let base_ty = self.infer(base)?;
        let base_ty = self.normalize(&base_ty, &e.span)?;
        let KType::Sigma { binder, a, b } = &base_ty.ty else {
            return Err(self.err(
                Code::E_TYPE_MISMATCH,
                &e.span,
                format!("`{}` has no field `{field}`", base_ty),
            ));
        };
        let base_path = path_of(base);
        match field.as_str() {
            "a" => {
                let mut t = (**a).clone();
                // The component stays reachable through the pair.
                t.qual = t.qual.union(&base_ty.qual);
                if let Some(p) = &base_path {
                    t.qual.vars.insert(p[0].clone());
                    t.qual.fresh = a.qual.fresh;
                }
                Ok(t)
            }
            "b" => {
                let s = match &base_path {
                    Some(p) => {
                        let mut ap = p.clone();
                        ap.push("a".into());
                        Subst { binder: binder.clone(), path: Some(ap), qual: a.qual.clone() }
                    }
                    None => Subst { binder: binder.clone(), path: None, qual: a.qual.clone() },
                };
                let t = subst_type(b, &s).map_err(|er| self.subst_err(&er, &e.span))?;
                Ok(t)
            }
            _ => Err(self.err(
                Code::E_TYPE_MISMATCH,
                &e.span,
                format!("Sigma values only have fields `a` and `b`, not `{field}`"),
            )),
        }
    }

    fn infer_block(&mut self, e: &KExpr, expected: Option<&QType>) -> TResult<QType> {
        let KExprKind::Block { stmts } = &e.kind else { unreachable!() };
        self.ctx.push_scope();
        let mark = self.ctx.entries.len();
        let mut last: Option<QType> = None;
        let n = stmts.len();
        let mut result: TResult<QType> = Ok(QType::unit());
        'body: {
            for (i, s) in stmts.iter().enumerate() {
                let tail = i + 1 == n;
                match s {
                    KStmt::Let { implicit, name, ty, init, span } => {
                        let t = match ty {
                            Some(ann) => {
                                let v = (|| {
                                    self.validate_type(ann, span)?;
                                    self.check_let_annotated(init, ann, span)
                                })();
                                match v {
                                    Ok(t) => t,
                                    Err(er) => {
                                        result = Err(er);
                                        break 'body;
                                    }
                                }
                            }
                            None => match self.infer(init) {
                                Ok(t) => t,
                                Err(er) => {
                                    result = Err(er);
                                    break 'body;
                                }
                            },
                        };
                        self.bind_let(name, t, *implicit, init, span);
                        last = None;
                    }
                    KStmt::Def(d) => {
                        // Bind first so the definition can recurse.
                        self.ctx.bind(d.name.clone(), d.value_type(), false, d.span.clone());
                        let r = self
                            .validate_def_signature(d)
                            .and_then(|_| match &d.body {
                                Some(_) => self.check_def_body(d),
                                None => Ok(()),
                            });
                        if let Err(er) = r {
                            result = Err(er);
                            break 'body;
                        }
                        last = None;
                    }
                    KStmt::Expr(inner) => {
                        let r = if tail {
                            match expected {
                                Some(exp) => self.check(inner, exp),
                                None => self.infer(inner),
                            }
                        } else {
                            self.infer(inner)
                        };
                        match r {
                            Ok(t) => last = Some(t),
                            Err(er) => {
                                result = Err(er);
                                break 'body;
                            }
                        }
                    }
                }
            }
            let mut t = last.unwrap_or_else(QType::unit);
            // Avoidance: saturate, then drop block-local variables from the
            // result qualifier.
            let locals: BTreeSet<String> =
                self.ctx.entries[mark..].iter().map(|b| b.name.clone()).collect();
            let mut q = self.ctx.saturate(&t.qual);
            q.vars.retain(|v| !locals.contains(v));
            t.qual = q;
            // A result type that still names a block-local has escaped.
            if let Some(root) = type_path_roots(&t.ty)
                .into_iter()
                .map(|p| self.ctx.resolve_path(&p))
                .find(|p| locals.contains(&p[0]))
            {
                result = Err(self.err(
                    Code::E_ESCAPE,
                    &e.span,
                    format!("result type mentions `{}`, which does not outlive this block", path_str(&root)),
                ));
            } else if result.is_ok() {
                result = Ok(t);
            }
        }
        self.ctx.pop_scope();
        result
    }

    // -- application spines -------------------------------------------------

    fn infer_spine(&mut self, e: &KExpr, expected: Option<&QType>) -> TResult<QType> {
        // Decompose the spine.
        let mut args: Vec<&KExpr> = Vec::new();
        let mut tyargs: Vec<QType> = Vec::new();
        let mut cur = e;
        loop {
            match &cur.kind {
                KExprKind::Apply { func, arg } => {
                    args.push(arg);
                    cur = func;
                }
                KExprKind::TyApply { func, args: ts } => {
                    tyargs = ts.clone();
                    cur = func;
                }
                _ => break,
            }
        }
        args.reverse();
        let head = cur;

        let mut inst: Option<Inst> = None;
        let mut fun_qual; // qualifier of the function value, for @kill(FUN)
        let mut fun_ty: QType;

        match &head.kind {
            KExprKind::Var(name) if self.ctx.lookup(name).is_some() => {
                self.fx.check_use(&self.ctx, name, &head.span)?;
                let b = self.ctx.lookup(name).unwrap();
                fun_ty = QType {
                    ty: b.ty.ty.clone(),
                    qual: if tracked(&b.ty.ty) { Qualifier::var(name.clone()) } else { Qualifier::empty() },
                };
                fun_qual = Qualifier::var(name.clone());
                if !tyargs.is_empty() {
                    return Err(self.err(
                        Code::E_TYPE_MISMATCH,
                        &head.span,
                        format!("`{name}` is not generic"),
                    ));
                }
            }
            KExprKind::Var(name) => {
                let prog = self.prog;
                let defs = prog.defs_named(name);
                if defs.is_empty() {
                    return Err(self.err(Code::E_UNBOUND, &head.span, format!("unknown name `{name}`")));
                }
                let def = if defs.len() == 1 {
                    defs[0]
                } else {
                    self.pick_overload(&defs, &args, &head.span)?
                };
                let (t, i) = self.instantiate(def, &tyargs, &head.span)?;
                fun_ty = t;
                inst = i;
                fun_qual = Qualifier::empty();
            }
            _ => {
                fun_ty = self.infer(head)?;
                fun_qual = fun_ty.qual.clone();
                if !tyargs.is_empty() {
                    return Err(self.err(
                        Code::E_TYPE_MISMATCH,
                        &head.span,
                        "only definitions take type arguments",
                    ));
                }
            }
        }

        for arg in &args {
            fun_ty = self.normalize(&fun_ty, &arg.span)?;
            // Interleaved implicit parameters resolve before the next
            // explicit argument.
            loop {
                match &fun_ty.ty {
                    KType::DepFun { implicit: true, .. } => {
                        fun_ty = self.apply_implicit(fun_ty, &fun_qual, &arg.span)?;
                    }
                    _ => break,
                }
            }
            let KType::DepFun { binder, implicit: false, param, result, kill } = fun_ty.ty.clone()
            else {
                return Err(self.err(
                    Code::E_TYPE_MISMATCH,
                    &arg.span,
                    format!("`{fun_ty}` is not a function; too many arguments?"),
                ));
            };
            let param = self.resolve(&param);
            let actual = self.check_arg(arg, &param)?;
            // Untracked positions demand an unreachable argument.
            let psat = self.ctx.saturate(&param.qual);
            if param.qual.untracked {
                if !self.ctx.subqual(&actual.qual, &Qualifier::default()) {
                    let asat = self.ctx.saturate(&actual.qual);
                    return Err(self.err(
                        Code::E_SUBQUAL,
                        &arg.span,
                        format!("argument reaching {asat} cannot flow into an untracked position"),
                    ));
                }
            } else if !psat.is_empty() && !self.ctx.subqual(&actual.qual, &psat) {
                return Err(self.err(
                    Code::E_SUBQUAL,
                    &arg.span,
                    format!(
                        "argument reaching {} exceeds the parameter bound {}",
                        self.ctx.saturate(&actual.qual),
                        psat
                    ),
                ));
            }
            // A one-shot function argument dies at this call together with
            // everything it captured.
            if let KType::DepFun { kill: pk, .. } = &param.ty {
                if pk.fun {
                    let mut k = KillSet { vars: actual.qual.vars.clone(), fun: false };
                    if let Some(p) = path_of(arg) {
                        k.vars.insert(p[0].clone());
                    }
                    self.fx.kill(&self.ctx, &k, &arg.span);
                }
            }
            let s = Subst { binder, path: path_of(arg), qual: actual.qual.clone() };
            let released = subst_kill(&kill, &s);
            if kill.fun {
                // The applied function itself is one-shot.
                let k = KillSet { vars: fun_qual.vars.clone(), fun: true };
                self.fx.kill(&self.ctx, &k, &arg.span);
            }
            self.fx.kill(&self.ctx, &released, &arg.span);
            fun_ty = subst_type(&result, &s).map_err(|er| self.subst_err(&er, &arg.span))?;
            fun_qual = fun_ty.qual.clone();
        }

        // Trailing implicit parameters: resolve now unless the caller wants
        // the implicit function itself.
        let wants_implicit_fun = matches!(
            expected.map(|t| &t.ty),
            Some(KType::DepFun { implicit: true, .. })
        );
        if !wants_implicit_fun {
            loop {
                fun_ty = self.normalize(&fun_ty, &e.span)?;
                match &fun_ty.ty {
                    KType::DepFun { implicit: true, .. } => {
                        fun_ty = self.apply_implicit(fun_ty, &fun_qual, &e.span)?;
                    }
                    _ => break,
                }
            }
        }

        if let Some(exp) = expected {
            if self.has_open_metas(&inst) {
                let _ = self.unify(&fun_ty, exp, &e.span);
            }
        }
        if let Some(inst) = &inst {
            self.finish_inst(inst, &e.span)?;
        }
        Ok(self.resolve(&fun_ty))
    }

    fn has_open_metas(&self, inst: &Option<Inst>) -> bool {
        let Some(i) = inst else { return false };
        i.tymetas.iter().any(|(m, _)| !self.solutions.contains_key(m))
            || i.qmetas.iter().any(|m| !self.qsolutions.contains_key(m))
    }

    fn finish_inst(&mut self, inst: &Inst, span: &Span) -> TResult<()> {
        for (m, bound) in &inst.tymetas {
            let Some(sol) = self.solutions.get(m).cloned() else {
                return Err(self.err(
                    Code::E_UNRESOLVED_TYPEPARAM,
                    span,
                    "cannot determine a type argument; supply it explicitly",
                ));
            };
            if let Some(b) = bound {
                self.check_bound(&sol, b, span)?;
            }
        }
        for m in &inst.qmetas {
            if !self.qsolutions.contains_key(m) {
                // An unconstrained qualifier argument defaults to empty.
                self.qsolutions.insert(m.clone(), Qualifier::empty());
            }
        }
        Ok(())
    }

    fn instantiate(
        &mut self,
        d: &KDef,
        tyargs: &[QType],
        span: &Span,
    ) -> TResult<(QType, Option<Inst>)> {
        let vt = d.value_type();
        if d.typarams.is_empty() {
            if !tyargs.is_empty() {
                return Err(self.err(
                    Code::E_TYPE_MISMATCH,
                    span,
                    format!("`{}` is not generic", d.name),
                ));
            }
            return Ok((vt, None));
        }
        if tyargs.len() > d.typarams.len() {
            return Err(self.err(
                Code::E_TYPE_MISMATCH,
                span,
                format!("`{}` takes at most {} type arguments", d.name, d.typarams.len()),
            ));
        }
        let mark = self.ctx.entries.len();
        let mut tymap = HashMap::new();
        let mut qmap = HashMap::new();
        let mut inst = Inst { tymetas: Vec::new(), qmetas: Vec::new() };
        for (i, tp) in d.typarams.iter().enumerate() {
            let m = self.fresh_meta("t");
            self.meta_marks.insert(m.clone(), mark);
            if let Some(given) = tyargs.get(i) {
                self.validate_type(given, span)?;
                if let Some(b) = &tp.bound {
                    self.check_bound(given, b, span)?;
                }
                self.solutions.insert(m.clone(), given.clone());
            }
            inst.tymetas.push((m.clone(), tp.bound.clone()));
            tymap.insert(tp.name.clone(), QType::plain(KType::Var(m)));
            if let Some(q) = &tp.qual_param {
                let qm = self.fresh_meta("q");
                self.meta_marks.insert(qm.clone(), mark);
                inst.qmetas.push(qm.clone());
                let mut qual = Qualifier::empty();
                qual.qvars.insert(qm.clone());
                qmap.insert(q.clone(), qual);
            }
        }
        let t = subst_qvars(&subst_tyvars(&vt, &tymap), &qmap);
        Ok((t, Some(inst)))
    }

    fn pick_overload(
        &mut self,
        defs: &[&'a KDef],
        args: &[&KExpr],
        span: &Span,
    ) -> TResult<&'a KDef> {
        // Overloads are distinguished by the shape of their first parameter.
        let Some(first) = args.first() else {
            return Err(self.err(
                Code::E_TYPE_MISMATCH,
                span,
                "ambiguous reference to an overloaded definition",
            ));
        };
        // Probe the first argument's type without committing effects or
        // unification state.
        let saved_fx = self.fx.clone();
        let saved_sol = self.solutions.clone();
        let saved_qsol = self.qsolutions.clone();
        let probe = self.infer(first);
        self.fx = saved_fx;
        self.solutions = saved_sol;
        self.qsolutions = saved_qsol;
        let probe = probe?;
        let probe = self.normalize(&probe, span)?;
        for d in defs {
            if d.params.first().is_some_and(|p| self.shape_compatible(&probe.ty, &p.ty.ty)) {
                return Ok(d);
            }
        }
        Err(self.err(
            Code::E_TYPE_MISMATCH,
            span,
            format!("no overload of `{}` accepts `{probe}`", defs[0].name),
        ))
    }

    fn shape_compatible(&self, arg: &KType, param: &KType) -> bool {
        match (arg, param) {
            (KType::Named { name: a, .. }, KType::Named { name: p, .. }) => {
                a == p || self.g.is_subclass(a, p)
            }
            (KType::Prim(a), KType::Prim(p)) => a == p,
            (KType::PathMember { member: a, .. }, KType::PathMember { member: p, .. }) => a == p,
            (KType::Sigma { .. }, KType::Sigma { .. }) => true,
            (KType::DepFun { .. }, KType::DepFun { .. }) => true,
            (_, KType::Var(_)) => true,
            (KType::Named { name, .. }, KType::Project { member, .. }) => {
                name == member || self.g.is_subclass(name, member)
            }
            _ => false,
        }
    }

    fn check_arg(&mut self, arg: &KExpr, param: &QType) -> TResult<QType> {
        // By-name parameters accept plain expressions, thunked.
        if let KType::DepFun { binder, param: p0, result, .. } = &param.ty {
            if binder.starts_with("$bn")
                && p0.ty == KType::Prim(PrimTy::Unit)
                && !matches!(arg.kind, KExprKind::Lambda { .. })
            {
                let saved = std::mem::replace(&mut self.fx, EffectState::new(!self.opts.no_effect_check));
                let r = self.check(arg, result);
                let _inner = std::mem::replace(&mut self.fx, saved);
                r?;
                return Ok(QType { ty: param.ty.clone(), qual: self.capture_qual(arg) });
            }
        }
        self.check(arg, param)
    }

    /// Resolve the implicit parameter at the head of `fun_ty` and apply it.
    fn apply_implicit(&mut self, fun_ty: QType, fun_qual: &Qualifier, span: &Span) -> TResult<QType> {
        let KType::DepFun { binder, implicit: true, param, result, kill } = fun_ty.ty else {
            unreachable!()
        };
        let target = self.resolve(&param);
        let (name, cand_ty) = self.resolve_implicit(&target, span)?;
        // Solve open metas in the parameter from the candidate.
        if type_has_metas(&target) {
            self.unify(&cand_ty, &target, span)?;
        }
        let s = Subst {
            binder,
            path: Some(vec![name.clone()]),
            qual: Qualifier::var(name.clone()),
        };
        let released = subst_kill(&kill, &s);
        if kill.fun {
            let k = KillSet { vars: fun_qual.vars.clone(), fun: true };
            self.fx.kill(&self.ctx, &k, span);
        }
        self.fx.kill(&self.ctx, &released, span);
        subst_type(&result, &s).map_err(|er| self.subst_err(&er, span))
    }

    /// Find the implicit candidate for `target`. Returns its name and type.
    pub fn resolve_implicit(&mut self, target: &QType, span: &Span) -> TResult<(String, QType)> {
        struct Cand {
            name: String,
            ty: QType,
            depth: usize,
            pos: usize,
            live: bool,
        }
        let mut matches: Vec<Cand> = Vec::new();
        for (pos, b) in self.ctx.entries.iter().enumerate().rev() {
            if !b.implicit {
                continue;
            }
            let Ok(cand) = self.g.normalize(&b.ty) else { continue };
            let Ok(tgt) = self.g.normalize(target) else { continue };
            let ok = if type_has_metas(&tgt) {
                meta_shape_match(&self.ctx, &cand.ty, &tgt.ty)
            } else {
                shape_equal(&self.ctx, &cand.ty, &tgt.ty)
            };
            if !ok {
                continue;
            }
            let live = self.fx.dead_witness(&self.ctx, &b.name).is_none();
            matches.push(Cand { name: b.name.clone(), ty: b.ty.clone(), depth: b.depth, pos, live });
        }
        if matches.is_empty() {
            return Err(self.err(
                Code::E_NO_IMPLICIT,
                span,
                format!("no implicit value of type `{target}` is in scope"),
            ));
        }
        let pool: Vec<&Cand> = if self.opts.scala_compat {
            matches.iter().collect()
        } else {
            matches.iter().filter(|c| c.live).collect()
        };
        if pool.is_empty() {
            // Everything that matches has been consumed.
            let dead = &matches[0];
            return Err(self
                .fx
                .check_use(&self.ctx, &dead.name, span)
                .expect_err("candidate is dead"));
        }
        let best_depth = pool.iter().map(|c| c.depth).max().unwrap();
        let at_best: Vec<&&Cand> = pool.iter().filter(|c| c.depth == best_depth).collect();
        if at_best.len() > 1 {
            let names: Vec<&str> = at_best.iter().map(|c| c.name.as_str()).collect();
            return Err(self.err(
                Code::E_AMBIGUOUS_IMPLICIT,
                span,
                format!(
                    "ambiguous implicit for `{target}`: {} are both in scope at the same depth",
                    names.join(" and ")
                ),
            ));
        }
        let chosen = pool.iter().max_by_key(|c| (c.depth, c.pos)).unwrap();
        if self.opts.scala_compat {
            // The classic resolver may pick a consumed capability; the use
            // check catches it.
            self.fx.check_use(&self.ctx, &chosen.name, span)?;
        }
        Ok((chosen.name.clone(), chosen.ty.clone()))
    }
}

fn type_has_metas(t: &QType) -> bool {
    if t.qual.qvars.iter().any(|v| is_meta(v)) {
        return true;
    }
    match &t.ty {
        KType::Var(v) => is_meta(v),
        KType::Named { args, .. } | KType::TypeFun { args, .. } | KType::PathMember { args, .. } => {
            args.iter().any(type_has_metas)
        }
        KType::DepFun { param, result, .. } => type_has_metas(param) || type_has_metas(result),
        KType::Sigma { a, b, .. } => type_has_metas(a) || type_has_metas(b),
        _ => false,
    }
}

/// Shape match that treats metavariables as wildcards (used while an implicit
/// target still has open parameters).
fn meta_shape_match(ctx: &Ctx, cand: &KType, target: &KType) -> bool {
    match (cand, target) {
        (_, KType::Var(v)) if is_meta(v) => true,
        (KType::Named { name: a, args: xs }, KType::Named { name: b, args: ys }) => {
            a == b && xs.len() == ys.len()
                && xs.iter().zip(ys).all(|(x, y)| meta_shape_match(ctx, &x.ty, &y.ty))
        }
        (
            KType::PathMember { path: p1, member: m1, args: xs },
            KType::PathMember { path: p2, member: m2, args: ys },
        ) => {
            m1 == m2
                && paths_equal(ctx, p1, p2)
                && xs.len() == ys.len()
                && xs.iter().zip(ys).all(|(x, y)| meta_shape_match(ctx, &x.ty, &y.ty))
        }
        _ => shape_equal(ctx, cand, target),
    }
}

/// All paths appearing in a type (used for block escape checking).
fn type_path_roots(t: &KType) -> Vec<Path> {
    let mut out = Vec::new();
    fn go(t: &KType, bound: &mut Vec<String>, out: &mut Vec<Path>) {
        match t {
            KType::PathMember { path, args, .. } => {
                if !bound.iter().any(|b| b == &path[0]) {
                    out.push(path.clone());
                }
                for a in args {
                    go(&a.ty, bound, out);
                }
            }
            KType::Singleton(path) => {
                if !bound.iter().any(|b| b == &path[0]) {
                    out.push(path.clone());
                }
            }
            KType::Named { args, .. } | KType::TypeFun { args, .. } => {
                for a in args {
                    go(&a.ty, bound, out);
                }
            }
            KType::DepFun { binder, param, result, .. } => {
                go(&param.ty, bound, out);
                bound.push(binder.clone());
                go(&result.ty, bound, out);
                bound.pop();
            }
            KType::Sigma { binder, a, b } => {
                go(&a.ty, bound, out);
                bound.push(binder.clone());
                go(&b.ty, bound, out);
                bound.pop();
            }
            _ => {}
        }
    }
    go(t, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE_API: &str = r#"
class File { type IsOpen }
extern def mkFile(path: Str): File^ = "file.mk"
extern def openFile(f: File): f.IsOpen^ = "file.open"
extern def readAll(f: File)(using c: f.IsOpen): Str = "file.read"
extern def writeAll(f: File, s: Str)(using c: f.IsOpen): Unit = "file.write"
extern def closeFile(f: File)(using c: f.IsOpen): Unit @kill(c) = "file.close"
"#;

    fn check_src(src: &str) -> Vec<Diagnostic> {
        let full = format!("{FILE_API}\n{src}");
        let p = crate::syntax::parse_program("t.cap", &full).unwrap();
        let k = crate::desugar::desugar_program(&p).unwrap();
        check_program(&k, &Options::default()).1
    }

    fn codes(src: &str) -> Vec<Code> {
        check_src(src).iter().map(|d| d.code).collect()
    }

    fn check_with(src: &str, opts: &Options) -> Vec<Code> {
        let full = format!("{FILE_API}\n{src}");
        let p = crate::syntax::parse_program("t.cap", &full).unwrap();
        let k = crate::desugar::desugar_program(&p).unwrap();
        check_program(&k, opts).1.iter().map(|d| d.code).collect()
    }

    #[test]
    fn open_read_close_checks() {
        let d = check_src(
            r#"
def main(): Str = {
  val f = mkFile("a.txt")
  implicit val c = openFile(f)
  val s = readAll(f)
  closeFile(f)
  s
}
"#,
        );
        assert!(d.is_empty(), "unexpected: {:?}", d);
    }

    #[test]
    fn read_after_close_is_killed_use() {
        assert_eq!(
            codes(
                r#"
def main(): Str = {
  val f = mkFile("a.txt")
  implicit val c = openFile(f)
  closeFile(f)
  readAll(f)
}
"#
            ),
            vec![Code::E_KILLED_USE]
        );
    }

    #[test]
    fn close_through_alias_kills_original() {
        assert_eq!(
            codes(
                r#"
def main(): Str = {
  val f = mkFile("a.txt")
  implicit val c = openFile(f)
  val g = f
  closeFile(g)
  readAll(f)
}
"#
            ),
            vec![Code::E_KILLED_USE]
        );
    }

    #[test]
    fn read_without_open_needs_implicit() {
        assert_eq!(
            codes(
                r#"
def main(): Str = {
  val f = mkFile("a.txt")
  readAll(f)
}
"#
            ),
            vec![Code::E_NO_IMPLICIT]
        );
    }

    #[test]
    fn fresh_file_cannot_flow_into_untracked_result() {
        assert_eq!(
            codes(
                r#"
def main(): File^{} = {
  val f = mkFile("a.txt")
  f
}
"#
            ),
            vec![Code::E_SUBQUAL]
        );
    }

    #[test]
    fn throwing_a_tracked_value_escapes() {
        assert_eq!(
            codes(
                r#"
def main(): Unit = {
  val f = mkFile("a.txt")
  throw f
}
"#
            ),
            vec![Code::E_ESCAPE]
        );
    }

    #[test]
    fn kill_of_parameter_must_be_declared() {
        assert_eq!(
            codes(
                r#"
def sneaky(f: File)(using c: f.IsOpen): Unit = closeFile(f)
"#
            ),
            vec![Code::E_KILL_UNDECLARED]
        );
    }

    const WITH_FILE: &str = r#"
def withFile[T^q](path: Str, op: (f0: File^) => (c: f0.IsOpen) ?=> T^{q}): T^{q} = {
  val f = mkFile(path)
  implicit val c = openFile(f)
  val r = op(f)
  closeFile(f)
  r
}
"#;

    #[test]
    fn with_file_scoped_callback_checks() {
        let d = check_src(&format!(
            "{WITH_FILE}\ndef main(): Str = withFile(\"a.txt\", (f: File) => readAll(f))\n"
        ));
        assert!(d.is_empty(), "unexpected: {:?}", d);
    }

    #[test]
    fn with_file_leaking_callback_rejected() {
        assert_eq!(
            codes(&format!(
                "{WITH_FILE}\n\
                 def leakFile(f: File^)(using c: f.IsOpen): File^{{f}} = f\n\
                 def main(): Unit = {{\n  val x = withFile(\"a.txt\", leakFile)\n  ()\n}}\n"
            )),
            vec![Code::E_SUBQUAL]
        );
    }

    #[test]
    fn two_live_candidates_at_same_depth_are_ambiguous() {
        assert_eq!(
            codes(
                r#"
def main(): Str = {
  val f = mkFile("a.txt")
  implicit val c1 = openFile(f)
  implicit val c2 = openFile(f)
  readAll(f)
}
"#
            ),
            vec![Code::E_AMBIGUOUS_IMPLICIT]
        );
    }

    #[test]
    fn killed_candidate_is_filtered_by_default_but_not_in_compat_mode() {
        let src = r#"
def main(): Str = {
  val f = mkFile("a.txt")
  implicit val c1 = openFile(f)
  closeFile(f)
  implicit val c2 = openFile(f)
  readAll(f)
}
"#;
        assert!(codes(src).is_empty(), "default mode should re-resolve to c2");
        let compat = check_with(src, &Options { scala_compat: true, no_effect_check: false });
        assert_eq!(compat, vec![Code::E_AMBIGUOUS_IMPLICIT]);
    }

    #[test]
    fn inner_scope_candidate_wins() {
        let d = check_src(
            r#"
def main(): Str = {
  val f = mkFile("a.txt")
  implicit val c1 = openFile(f)
  val s = {
    implicit val c2 = openFile(f)
    closeFile(f)
    "done"
  }
  readAll(f)
}
"#,
        );
        // The inner close consumed c2; the outer read still finds c1 live.
        assert!(d.is_empty(), "unexpected: {:?}", d);
    }

    #[test]
    fn unresolvable_type_parameter_reported() {
        assert_eq!(
            codes(
                r#"
extern def conjure[T](u: Unit): T = "dbg.conjure"
def main(): Unit = {
  val x = conjure(())
  ()
}
"#
            ),
            vec![Code::E_UNRESOLVED_TYPEPARAM]
        );
    }

    #[test]
    fn explicit_type_argument_resolves() {
        let d = check_src(
            r#"
extern def conjure[T](u: Unit): T = "dbg.conjure"
def main(): Int = conjure[Int](())
"#,
        );
        assert!(d.is_empty(), "unexpected: {:?}", d);
    }

    #[test]
    fn my_summon_checks_but_cannot_smuggle() {
        // Defining mySummon is fine; using it to leak a capability out of a
        // scoped region is caught at the region boundary.
        let d = check_src(
            r#"
def mySummon[T^q](using c: T^{q}): T^{c} = c
"#,
        );
        assert!(d.is_empty(), "unexpected: {:?}", d);
    }

    #[test]
    fn unknown_name_is_unbound() {
        assert_eq!(codes("def main(): Unit = frobnicate(3)\n"), vec![Code::E_UNBOUND]);
    }

    #[test]
    fn no_effect_check_disables_kill_tracking() {
        let src = r#"
def main(): Str = {
  val f = mkFile("a.txt")
  implicit val c = openFile(f)
  closeFile(f)
  readAll(f)
}
"#;
        let d = check_with(src, &Options { scala_compat: false, no_effect_check: true });
        assert!(d.is_empty(), "unexpected: {:?}", d);
    }
}
