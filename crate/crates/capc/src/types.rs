//! The type algebra: typing contexts, qualifier saturation, subqualification,
//! substitution, type-function normalization, and type equality.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::kernel::*;
use crate::span::Span;

// ---------------------------------------------------------------------------
// Typing context

#[derive(Debug, Clone)]
pub struct Binding {
    pub name: String,
    pub ty: QType,
    pub implicit: bool,
    /// Set when the binding is a transparent alias for a path
    /// (`val f: s.a.type = s.a`).
    pub alias: Option<Path>,
    /// Scope depth at introduction; implicit resolution prefers deeper.
    pub depth: usize,
    pub span: Span,
}

#[derive(Debug, Clone, Default)]
pub struct Ctx {
    pub entries: Vec<Binding>,
    scopes: Vec<usize>,
}

impl Ctx {
    pub fn new() -> Ctx {
        Ctx::default()
    }

    pub fn depth(&self) -> usize {
        self.scopes.len()
    }

    pub fn push_scope(&mut self) {
        self.scopes.push(self.entries.len());
    }

    pub fn pop_scope(&mut self) {
        let n = self.scopes.pop().expect("scope underflow");
        self.entries.truncate(n);
    }

    pub fn bind(&mut self, name: impl Into<String>, ty: QType, implicit: bool, span: Span) {
        let depth = self.depth();
        self.entries.push(Binding { name: name.into(), ty, implicit, alias: None, depth, span });
    }

    pub fn bind_alias(&mut self, name: impl Into<String>, ty: QType, alias: Path, span: Span) {
        let depth = self.depth();
        self.entries.push(Binding {
            name: name.into(),
            ty,
            implicit: false,
            alias: Some(alias),
            depth,
            span,
        });
    }

    pub fn lookup(&self, name: &str) -> Option<&Binding> {
        self.entries.iter().rev().find(|b| b.name == name)
    }

    /// Canonical form of a path: resolve leading alias bindings so that two
    /// names for the same component compare equal.
    pub fn resolve_path(&self, path: &Path) -> Path {
        let mut head = path[0].clone();
        let mut tail: Vec<String> = path[1..].to_vec();
        let mut guard = 0;
        while let Some(b) = self.lookup(&head) {
            let Some(alias) = &b.alias else { break };
            let mut new_tail = alias[1..].to_vec();
            new_tail.extend(tail);
            head = alias[0].clone();
            tail = new_tail;
            guard += 1;
            if guard > 64 {
                break;
            }
        }
        let mut out = vec![head];
        out.extend(tail);
        out
    }

    // -- qualifier saturation ------------------------------------------------

    /// Transitive closure of a qualifier through the context: if `x` is in
    /// the set and the context types `x` with qualifier `{y}`, then `y` is in
    /// the closure too.
    pub fn saturate(&self, q: &Qualifier) -> Qualifier {
        self.saturate_trace(q).0
    }

    /// Saturation that also reports the discovery edges (`from` pulled in
    /// `to`), used for E_KILLED_USE witness notes.
    pub fn saturate_trace(&self, q: &Qualifier) -> (Qualifier, Vec<(String, String)>) {
        let mut out = q.clone();
        let mut edges = Vec::new();
        let mut work: VecDeque<String> = q.vars.iter().cloned().collect();
        while let Some(x) = work.pop_front() {
            let Some(b) = self.lookup(&x) else { continue };
            let qx = &b.ty.qual;
            out.fresh |= qx.fresh;
            for qv in &qx.qvars {
                out.qvars.insert(qv.clone());
            }
            for y in &qx.vars {
                if out.vars.insert(y.clone()) {
                    edges.push((x.clone(), y.clone()));
                    work.push_back(y.clone());
                }
            }
        }
        (out, edges)
    }

    /// `q1 <= q2`: every capability reachable from `q1` is already reachable
    /// from `q2`. A fresh marker on the right is top: a position that owns its
    /// own fresh resource absorbs anything. A variable not named on the right
    /// may *widen* to its declared qualifier (`{x} <= {q}` when `x: T^{q}`).
    pub fn subqual(&self, q1: &Qualifier, q2: &Qualifier) -> bool {
        let s2 = self.saturate(q2);
        if s2.fresh {
            return true;
        }
        if q1.fresh || !q1.qvars.is_subset(&s2.qvars) {
            return false;
        }
        let mut seen = BTreeSet::new();
        q1.vars.iter().all(|v| self.var_within(v, &s2, &mut seen))
    }

    fn var_within(&self, v: &str, s2: &Qualifier, seen: &mut BTreeSet<String>) -> bool {
        if s2.vars.contains(v) {
            return true;
        }
        // Already explored (or currently exploring) this variable: assume it
        // fits. Widening is a greatest fixpoint, so a cycle that never
        // escapes to a variable outside `s2` is within bounds, and a variable
        // that already passed need not be re-walked.
        if !seen.insert(v.to_string()) {
            return true;
        }
        let Some(b) = self.lookup(v) else { return false };
        let q = &b.ty.qual;
        !q.fresh
            && q.qvars.is_subset(&s2.qvars)
            && q.vars.iter().all(|w| self.var_within(w, s2, seen))
    }

    /// Saturated kill set: close each killed variable through the context.
    pub fn saturate_kill(&self, k: &KillSet) -> KillSet {
        let q = Qualifier { vars: k.vars.clone(), ..Qualifier::default() };
        let s = self.saturate(&q);
        KillSet { vars: s.vars, fun: k.fun }
    }
}

// ---------------------------------------------------------------------------
// Substitution

/// What a dependent binder gets replaced by at an application site.
#[derive(Debug, Clone)]
pub struct Subst {
    pub binder: String,
    /// The argument as a path, when it has one (`f`, `s.a`).
    pub path: Option<Path>,
    /// The argument's qualifier, replacing the binder in qualifier positions.
    pub qual: Qualifier,
}

#[derive(Debug, Clone)]
pub struct SubstError {
    /// The path that mentioned the binder and could not be rewritten.
    pub path: Path,
}

fn subst_path(p: &Path, s: &Subst) -> Result<Option<Path>, SubstError> {
    if p[0] != s.binder {
        return Ok(None);
    }
    match &s.path {
        Some(rep) => {
            let mut out = rep.clone();
            out.extend(p[1..].iter().cloned());
            Ok(Some(out))
        }
        None => Err(SubstError { path: p.clone() }),
    }
}

fn subst_qual(q: &Qualifier, s: &Subst) -> Qualifier {
    if !q.vars.contains(&s.binder) {
        return q.clone();
    }
    let mut out = q.clone();
    out.vars.remove(&s.binder);
    out.vars.extend(s.qual.vars.iter().cloned());
    out.qvars.extend(s.qual.qvars.iter().cloned());
    out.fresh |= s.qual.fresh;
    out
}

pub fn subst_kill(k: &KillSet, s: &Subst) -> KillSet {
    if !k.vars.contains(&s.binder) {
        return k.clone();
    }
    let mut out = k.clone();
    out.vars.remove(&s.binder);
    // Killing the binder kills whatever the argument reaches; a path argument
    // contributes its root as well.
    out.vars.extend(s.qual.vars.iter().cloned());
    if let Some(p) = &s.path {
        out.vars.insert(p[0].clone());
    }
    out
}

/// Substitute a term binder throughout a type. Fails with [`SubstError`] when
/// the binder occurs in a path position but the argument has no path.
pub fn subst_type(t: &QType, s: &Subst) -> Result<QType, SubstError> {
    let qual = subst_qual(&t.qual, s);
    let ty = subst_ktype(&t.ty, s)?;
    Ok(QType { ty, qual })
}

fn subst_ktype(t: &KType, s: &Subst) -> Result<KType, SubstError> {
    Ok(match t {
        KType::Prim(_) | KType::Var(_) | KType::Nat(_) | KType::Project { .. } => t.clone(),
        KType::Named { name, args } => KType::Named {
            name: name.clone(),
            args: args.iter().map(|a| subst_type(a, s)).collect::<Result<_, _>>()?,
        },
        KType::TypeFun { name, args } => KType::TypeFun {
            name: name.clone(),
            args: args.iter().map(|a| subst_type(a, s)).collect::<Result<_, _>>()?,
        },
        KType::PathMember { path, member, args } => {
            let path = subst_path(path, s)?.unwrap_or_else(|| path.clone());
            KType::PathMember {
                path,
                member: member.clone(),
                args: args.iter().map(|a| subst_type(a, s)).collect::<Result<_, _>>()?,
            }
        }
        KType::Singleton(p) => KType::Singleton(subst_path(p, s)?.unwrap_or_else(|| p.clone())),
        KType::DepFun { binder, implicit, param, result, kill } => {
            if binder == &s.binder {
                // Shadowed; nothing to substitute inside.
                t.clone()
            } else {
                KType::DepFun {
                    binder: binder.clone(),
                    implicit: *implicit,
                    param: Box::new(subst_type(param, s)?),
                    result: Box::new(subst_type(result, s)?),
                    kill: subst_kill(kill, s),
                }
            }
        }
        KType::Sigma { binder, a, b } => {
            if binder == &s.binder {
                t.clone()
            } else {
                KType::Sigma {
                    binder: binder.clone(),
                    a: Box::new(subst_type(a, s)?),
                    b: Box::new(subst_type(b, s)?),
                }
            }
        }
    })
}

/// Substitute type variables (`[T]` parameters and unification metavariables).
pub fn subst_tyvars(t: &QType, map: &HashMap<String, QType>) -> QType {
    let ty = match &t.ty {
        KType::Var(v) => {
            if let Some(rep) = map.get(v) {
                // The replacement's own qualifier joins the annotation site's.
                return QType { ty: rep.ty.clone(), qual: rep.qual.union(&t.qual) };
            }
            t.ty.clone()
        }
        KType::Prim(_) | KType::Nat(_) | KType::Project { .. } => t.ty.clone(),
        KType::Named { name, args } => KType::Named {
            name: name.clone(),
            args: args.iter().map(|a| subst_tyvars(a, map)).collect(),
        },
        KType::TypeFun { name, args } => KType::TypeFun {
            name: name.clone(),
            args: args.iter().map(|a| subst_tyvars(a, map)).collect(),
        },
        KType::PathMember { path, member, args } => KType::PathMember {
            path: path.clone(),
            member: member.clone(),
            args: args.iter().map(|a| subst_tyvars(a, map)).collect(),
        },
        KType::Singleton(p) => KType::Singleton(p.clone()),
        KType::DepFun { binder, implicit, param, result, kill } => KType::DepFun {
            binder: binder.clone(),
            implicit: *implicit,
            param: Box::new(subst_tyvars(param, map)),
            result: Box::new(subst_tyvars(result, map)),
            kill: kill.clone(),
        },
        KType::Sigma { binder, a, b } => KType::Sigma {
            binder: binder.clone(),
            a: Box::new(subst_tyvars(a, map)),
            b: Box::new(subst_tyvars(b, map)),
        },
    };
    QType { ty, qual: t.qual.clone() }
}

/// Substitute qualifier variables (`[T^q]` parameters).
pub fn subst_qvars(t: &QType, map: &HashMap<String, Qualifier>) -> QType {
    let mut qual = t.qual.clone();
    let mut hit = Vec::new();
    for qv in &t.qual.qvars {
        if map.contains_key(qv) {
            hit.push(qv.clone());
        }
    }
    for qv in hit {
        qual.qvars.remove(&qv);
        let rep = &map[&qv];
        qual.vars.extend(rep.vars.iter().cloned());
        qual.qvars.extend(rep.qvars.iter().cloned());
        qual.fresh |= rep.fresh;
    }
    let ty = match &t.ty {
        KType::Named { name, args } => KType::Named {
            name: name.clone(),
            args: args.iter().map(|a| subst_qvars(a, map)).collect(),
        },
        KType::TypeFun { name, args } => KType::TypeFun {
            name: name.clone(),
            args: args.iter().map(|a| subst_qvars(a, map)).collect(),
        },
        KType::PathMember { path, member, args } => KType::PathMember {
            path: path.clone(),
            member: member.clone(),
            args: args.iter().map(|a| subst_qvars(a, map)).collect(),
        },
        KType::DepFun { binder, implicit, param, result, kill } => KType::DepFun {
            binder: binder.clone(),
            implicit: *implicit,
            param: Box::new(subst_qvars(param, map)),
            result: Box::new(subst_qvars(result, map)),
            kill: kill.clone(),
        },
        KType::Sigma { binder, a, b } => KType::Sigma {
            binder: binder.clone(),
            a: Box::new(subst_qvars(a, map)),
            b: Box::new(subst_qvars(b, map)),
        },
        other => other.clone(),
    };
    QType { ty, qual }
}

// ---------------------------------------------------------------------------
// Class table and type-function normalization

#[derive(Debug, Clone)]
pub struct ClassSig {
    pub decl: KClass,
    /// Enclosing class for nested classes (`Row` inside `Table`).
    pub owner: Option<String>,
}

#[derive(Debug, Default)]
pub struct Globals {
    pub classes: HashMap<String, ClassSig>,
    pub typefuns: HashMap<String, KTypeFun>,
}

#[derive(Debug)]
pub enum NormError {
    /// A type-function application did not reduce within the step budget or
    /// matched no case with a constructor-headed scrutinee.
    Stuck { name: String, arg: KType },
}

impl Globals {
    pub fn from_program(p: &KProgram) -> Globals {
        let mut g = Globals::default();
        for c in &p.classes {
            g.add_class(c, None);
        }
        for t in &p.typefuns {
            g.typefuns.insert(t.name.clone(), t.clone());
        }
        g
    }

    fn add_class(&mut self, c: &KClass, owner: Option<&str>) {
        self.classes
            .insert(c.name.clone(), ClassSig { decl: c.clone(), owner: owner.map(str::to_string) });
        for n in &c.nested {
            self.add_class(n, Some(&c.name));
        }
    }

    /// Nominal subclass chain: `name` and its transitive parents.
    pub fn parents(&self, name: &str) -> Vec<String> {
        let mut out = vec![name.to_string()];
        let mut cur = name.to_string();
        let mut guard = 0;
        while let Some(sig) = self.classes.get(&cur) {
            let Some(KType::Named { name: p, .. }) = &sig.decl.parent else { break };
            out.push(p.clone());
            cur = p.clone();
            guard += 1;
            if guard > 64 {
                break;
            }
        }
        out
    }

    pub fn is_subclass(&self, sub: &str, sup: &str) -> bool {
        self.parents(sub).iter().any(|p| p == sup)
    }

    /// Reduce type-function applications. Leaves applications stuck on a
    /// type variable unreduced; a constructor-headed scrutinee that matches
    /// no case is an error.
    pub fn normalize(&self, t: &QType) -> Result<QType, NormError> {
        self.normalize_depth(t, 0)
    }

    fn normalize_depth(&self, t: &QType, depth: usize) -> Result<QType, NormError> {
        if depth > 64 {
            return Err(NormError::Stuck { name: "<depth>".into(), arg: t.ty.clone() });
        }
        // A `Named` head that is actually a typefun (lowered without the
        // declaration in scope) reduces the same way.
        if let KType::Named { name, args } = &t.ty {
            if self.typefuns.contains_key(name) {
                return self.normalize_depth(
                    &QType {
                        ty: KType::TypeFun { name: name.clone(), args: args.clone() },
                        qual: t.qual.clone(),
                    },
                    depth + 1,
                );
            }
        }
        let ty = match &t.ty {
            KType::TypeFun { name, args } => {
                let args: Vec<QType> = args
                    .iter()
                    .map(|a| self.normalize_depth(a, depth + 1))
                    .collect::<Result<_, _>>()?;
                let Some(tf) = self.typefuns.get(name) else {
                    return Ok(QType { ty: KType::TypeFun { name: name.clone(), args }, qual: t.qual.clone() });
                };
                let scrut_idx =
                    tf.params.iter().position(|p| p.name == tf.scrutinee).unwrap_or(0);
                let scrut = &args[scrut_idx];
                let (head, head_args) = match &scrut.ty {
                    KType::Named { name, args } => (name.clone(), args.clone()),
                    KType::Var(_) | KType::TypeFun { .. } | KType::PathMember { .. } => {
                        // Stuck on an opaque scrutinee: leave unreduced.
                        return Ok(QType {
                            ty: KType::TypeFun { name: name.clone(), args },
                            qual: t.qual.clone(),
                        });
                    }
                    other => {
                        return Err(NormError::Stuck { name: name.clone(), arg: other.clone() })
                    }
                };
                let Some(case) = tf.cases.iter().find(|c| c.con == head) else {
                    return Err(NormError::Stuck {
                        name: name.clone(),
                        arg: scrut.ty.clone(),
                    });
                };
                let mut map: HashMap<String, QType> = HashMap::new();
                for (v, a) in case.vars.iter().zip(head_args.iter()) {
                    map.insert(v.clone(), a.clone());
                }
                // Non-scrutinee typefun parameters are also in scope in the body.
                for (p, a) in tf.params.iter().zip(args.iter()) {
                    map.entry(p.name.clone()).or_insert_with(|| a.clone());
                }
                let body = subst_tyvars(&QType::plain(case.body.clone()), &map);
                let mut reduced = self.normalize_depth(&body, depth + 1)?;
                reduced.qual = reduced.qual.union(&t.qual);
                return Ok(reduced);
            }
            KType::Named { name, args } => KType::Named {
                name: name.clone(),
                args: args
                    .iter()
                    .map(|a| self.normalize_depth(a, depth + 1))
                    .collect::<Result<_, _>>()?,
            },
            KType::PathMember { path, member, args } => KType::PathMember {
                path: path.clone(),
                member: member.clone(),
                args: args
                    .iter()
                    .map(|a| self.normalize_depth(a, depth + 1))
                    .collect::<Result<_, _>>()?,
            },
            KType::DepFun { binder, implicit, param, result, kill } => KType::DepFun {
                binder: binder.clone(),
                implicit: *implicit,
                param: Box::new(self.normalize_depth(param, depth + 1)?),
                result: Box::new(self.normalize_depth(result, depth + 1)?),
                kill: kill.clone(),
            },
            KType::Sigma { binder, a, b } => KType::Sigma {
                binder: binder.clone(),
                a: Box::new(self.normalize_depth(a, depth + 1)?),
                b: Box::new(self.normalize_depth(b, depth + 1)?),
            },
            other => other.clone(),
        };
        Ok(QType { ty, qual: t.qual.clone() })
    }

    /// Declaration-time sanity for a typefun: cases are constructor-headed,
    /// non-overlapping, and recursive calls only on pattern variables.
    pub fn check_typefun(&self, tf: &KTypeFun) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for c in &tf.cases {
            if !seen.insert(c.con.clone()) {
                return Err(format!("overlapping cases for constructor `{}`", c.con));
            }
            check_decreasing(&c.body, &tf.name, &c.vars)?;
        }
        Ok(())
    }
}

fn check_decreasing(t: &KType, fun: &str, vars: &[String]) -> Result<(), String> {
    match t {
        KType::TypeFun { name, args } if name == fun => {
            for a in args {
                match &a.ty {
                    KType::Var(v) if vars.contains(v) => {}
                    other => {
                        return Err(format!(
                            "recursive use of `{fun}` must be applied to a pattern variable, got `{other}`"
                        ))
                    }
                }
            }
            Ok(())
        }
        KType::Named { args, .. } | KType::TypeFun { args, .. } => {
            for a in args {
                check_decreasing(&a.ty, fun, vars)?;
            }
            Ok(())
        }
        KType::DepFun { param, result, .. } => {
            check_decreasing(&param.ty, fun, vars)?;
            check_decreasing(&result.ty, fun, vars)
        }
        KType::Sigma { a, b, .. } => {
            check_decreasing(&a.ty, fun, vars)?;
            check_decreasing(&b.ty, fun, vars)
        }
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Equality and subtyping

/// Structural type equality up to alpha-renaming of dependent binders and
/// path canonicalization via the context's alias map. Qualifiers are compared
/// for mutual subqualification.
pub fn type_equal(g: &Globals, ctx: &Ctx, t1: &QType, t2: &QType) -> bool {
    let (Ok(n1), Ok(n2)) = (g.normalize(t1), g.normalize(t2)) else {
        return false;
    };
    shape_equal(ctx, &n1.ty, &n2.ty) && ctx.subqual(&n1.qual, &n2.qual) && ctx.subqual(&n2.qual, &n1.qual)
}

pub fn paths_equal(ctx: &Ctx, p1: &Path, p2: &Path) -> bool {
    ctx.resolve_path(p1) == ctx.resolve_path(p2)
}

pub fn shape_equal(ctx: &Ctx, t1: &KType, t2: &KType) -> bool {
    match (t1, t2) {
        (KType::Prim(a), KType::Prim(b)) => a == b,
        (KType::Var(a), KType::Var(b)) => a == b,
        (KType::Nat(a), KType::Nat(b)) => a == b,
        (KType::Named { name: n1, args: a1 }, KType::Named { name: n2, args: a2 }) => {
            n1 == n2
                && a1.len() == a2.len()
                && a1.iter().zip(a2).all(|(x, y)| arg_equal(ctx, x, y))
        }
        (KType::TypeFun { name: n1, args: a1 }, KType::TypeFun { name: n2, args: a2 }) => {
            n1 == n2
                && a1.len() == a2.len()
                && a1.iter().zip(a2).all(|(x, y)| arg_equal(ctx, x, y))
        }
        (
            KType::PathMember { path: p1, member: m1, args: a1 },
            KType::PathMember { path: p2, member: m2, args: a2 },
        ) => {
            m1 == m2
                && paths_equal(ctx, p1, p2)
                && a1.len() == a2.len()
                && a1.iter().zip(a2).all(|(x, y)| arg_equal(ctx, x, y))
        }
        (KType::Singleton(p1), KType::Singleton(p2)) => paths_equal(ctx, p1, p2),
        (KType::Project { class: c1, member: m1 }, KType::Project { class: c2, member: m2 }) => {
            c1 == c2 && m1 == m2
        }
        (
            KType::DepFun { binder: b1, implicit: i1, param: p1, result: r1, kill: k1 },
            KType::DepFun { binder: b2, implicit: i2, param: p2, result: r2, kill: k2 },
        ) => {
            if i1 != i2 || !arg_equal(ctx, p1, p2) {
                return false;
            }
            // Alpha-rename the second binder to the first before comparing.
            let s = Subst {
                binder: b2.clone(),
                path: Some(vec![b1.clone()]),
                qual: Qualifier::var(b1.clone()),
            };
            let (Ok(r2), k2) = (subst_type(r2, &s), subst_kill(k2, &s)) else {
                return false;
            };
            arg_equal(ctx, r1, &r2) && *k1 == k2
        }
        (
            KType::Sigma { binder: b1, a: a1, b: c1 },
            KType::Sigma { binder: b2, a: a2, b: c2 },
        ) => {
            if !arg_equal(ctx, a1, a2) {
                return false;
            }
            let s = Subst {
                binder: b2.clone(),
                path: Some(vec![b1.clone()]),
                qual: Qualifier::var(b1.clone()),
            };
            let Ok(c2) = subst_type(c2, &s) else { return false };
            arg_equal(ctx, c1, &c2)
        }
        _ => false,
    }
}

fn arg_equal(ctx: &Ctx, t1: &QType, t2: &QType) -> bool {
    shape_equal(ctx, &t1.ty, &t2.ty)
        && ctx.subqual(&t1.qual, &t2.qual)
        && ctx.subqual(&t2.qual, &t1.qual)
}

/// `t1 <: t2`: equality, `Nothing` bottom, nominal parent chains, and
/// covariant qualifier weakening (a more precise qualifier may be used where
/// a wider one is expected). An unannotated expected qualifier places no
/// constraint; an explicit `^{}` demands the value reach nothing.
pub fn is_subtype(g: &Globals, ctx: &Ctx, t1: &QType, t2: &QType) -> bool {
    let (Ok(n1), Ok(n2)) = (g.normalize(t1), g.normalize(t2)) else {
        return false;
    };
    if n1.ty == KType::Prim(PrimTy::Nothing) {
        return true;
    }
    let shapes_ok = match (&n1.ty, &n2.ty) {
        (KType::Named { name: s, args: a1 }, KType::Named { name: t, args: a2 }) => {
            if s == t {
                a1.len() == a2.len() && a1.iter().zip(a2).all(|(x, y)| arg_equal(ctx, x, y))
            } else {
                // Nominal widening forgets the subclass's arguments, so it is
                // only allowed into an unapplied superclass.
                a2.is_empty() && g.is_subclass(s, t)
            }
        }
        // A stuck type-function application is known to land within the
        // function's declared result bound.
        (KType::TypeFun { name, .. }, KType::Named { name: t, args: a2 }) if a2.is_empty() => {
            g.typefuns.get(name).and_then(|tf| tf.bound.as_ref()).is_some_and(|b| {
                matches!(&b, KType::Named { name: bn, args }
                    if args.is_empty() && (bn == t || g.is_subclass(bn, t)))
            })
        }
        _ => shape_equal(ctx, &n1.ty, &n2.ty),
    };
    let qual_ok = if n2.qual.untracked {
        ctx.subqual(&n1.qual, &Qualifier::default())
    } else if n2.qual.is_empty() {
        true
    } else {
        ctx.subqual(&n1.qual, &n2.qual)
    };
    shapes_ok && qual_ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn sp() -> Span {
        Span::point(Arc::from("t"), 1, 1)
    }

    fn file_ty(qual: Qualifier) -> QType {
        QType { ty: KType::named("File"), qual }
    }

    #[test]
    fn saturation_follows_context_quals() {
        // f0: File^{} ; f: File^{f0} ; g: File^{f}
        let mut ctx = Ctx::new();
        ctx.bind("f0", file_ty(Qualifier::empty()), false, sp());
        ctx.bind("f", file_ty(Qualifier::var("f0")), false, sp());
        ctx.bind("g", file_ty(Qualifier::var("f")), false, sp());
        let s = ctx.saturate(&Qualifier::var("g"));
        assert!(s.vars.contains("g") && s.vars.contains("f") && s.vars.contains("f0"));
    }

    #[test]
    fn saturation_terminates_on_cycles() {
        let mut ctx = Ctx::new();
        ctx.bind("a", file_ty(Qualifier::var("b")), false, sp());
        ctx.bind("b", file_ty(Qualifier::var("a")), false, sp());
        let s = ctx.saturate(&Qualifier::var("a"));
        assert_eq!(s.vars.len(), 2);
    }

    #[test]
    fn subqual_saturates_right_and_widens_left() {
        let mut ctx = Ctx::new();
        ctx.bind("f0", file_ty(Qualifier::empty()), false, sp());
        ctx.bind("f", file_ty(Qualifier::var("f0")), false, sp());
        ctx.bind("g", file_ty(Qualifier::fresh()), false, sp());
        // f0 is reachable from f, and f widens to its bound {f0}.
        assert!(ctx.subqual(&Qualifier::var("f0"), &Qualifier::var("f")));
        assert!(ctx.subqual(&Qualifier::var("f"), &Qualifier::var("f0")));
        // g owns a fresh resource: it neither widens away nor fits f0.
        assert!(!ctx.subqual(&Qualifier::var("g"), &Qualifier::var("f0")));
        assert!(!ctx.subqual(&Qualifier::var("g"), &Qualifier::empty()));
    }

    #[test]
    fn fresh_requires_fresh() {
        let ctx = Ctx::new();
        assert!(!ctx.subqual(&Qualifier::fresh(), &Qualifier::var("x")));
        let mut both = Qualifier::var("x");
        both.fresh = true;
        assert!(ctx.subqual(&Qualifier::fresh(), &both));
    }

    #[test]
    fn alias_resolution_canonicalizes_paths() {
        let mut ctx = Ctx::new();
        ctx.bind("s", QType::plain(KType::named("S")), false, sp());
        ctx.bind_alias("f", QType::plain(KType::named("File")), vec!["s".into(), "a".into()], sp());
        assert_eq!(ctx.resolve_path(&vec!["f".into(), "IsOpen".into()]), vec![
            "s".to_string(),
            "a".to_string(),
            "IsOpen".to_string()
        ]);
        assert!(paths_equal(
            &ctx,
            &vec!["f".into()],
            &vec!["s".into(), "a".into()]
        ));
    }

    #[test]
    fn subst_rewrites_paths_and_kills() {
        // ((c: f.IsOpen) ?=> Unit @kill(c))[f := g]
        let t = QType::plain(KType::DepFun {
            binder: "c".into(),
            implicit: true,
            param: Box::new(QType::plain(KType::PathMember {
                path: vec!["f".into()],
                member: "IsOpen".into(),
                args: vec![],
            })),
            result: Box::new(QType::unit()),
            kill: KillSet::var("c"),
        });
        let s = Subst { binder: "f".into(), path: Some(vec!["g".into()]), qual: Qualifier::var("g") };
        let out = subst_type(&t, &s).unwrap();
        assert_eq!(out.to_string(), "(c: g.IsOpen) ?=> Unit @kill(c)");
    }

    #[test]
    fn subst_without_path_fails_in_path_position() {
        let t = QType::plain(KType::PathMember {
            path: vec!["f".into()],
            member: "IsOpen".into(),
            args: vec![],
        });
        let s = Subst { binder: "f".into(), path: None, qual: Qualifier::fresh() };
        assert!(subst_type(&t, &s).is_err());
    }

    #[test]
    fn alpha_equivalent_arrows_compare_equal() {
        let mk = |b: &str| {
            QType::plain(KType::DepFun {
                binder: b.into(),
                implicit: false,
                param: Box::new(QType::plain(KType::named("File"))),
                result: Box::new(QType::plain(KType::PathMember {
                    path: vec![b.into()],
                    member: "IsOpen".into(),
                    args: vec![],
                })),
                kill: KillSet::empty(),
            })
        };
        let g = Globals::default();
        let ctx = Ctx::new();
        assert!(type_equal(&g, &ctx, &mk("x"), &mk("y")));
    }

    fn session(src: &str) -> QType {
        crate::desugar::lower_type_str("t", src).unwrap()
    }

    fn dual_prog() -> Globals {
        let p = crate::syntax::parse_program(
            "t.cap",
            r#"
class Session
class End extends Session
class Send[T, P <: Session] extends Session
class Recv[T, P <: Session] extends Session
typefun Dual[P <: Session] <: Session = match P {
  case End => End
  case Send[t, p] => Recv[t, Dual[p]]
  case Recv[t, p] => Send[t, Dual[p]]
}
"#,
        )
        .unwrap();
        Globals::from_program(&crate::desugar::desugar_program(&p).unwrap())
    }

    #[test]
    fn dual_reduces_structurally() {
        let g = dual_prog();
        let ctx = Ctx::new();
        let t = session("Dual[Send[Str, Recv[Int, End]]]");
        let n = g.normalize(&t).unwrap();
        let expect = session("Recv[Str, Send[Int, End]]");
        assert!(type_equal(&g, &ctx, &n, &expect), "got {}", n);
    }

    #[test]
    fn dual_stuck_on_unknown_constructor() {
        let g = dual_prog();
        let t = session("Dual[Str]");
        assert!(g.normalize(&t).is_err());
    }

    #[test]
    fn typefun_termination_check() {
        let g = dual_prog();
        let tf = g.typefuns.get("Dual").unwrap();
        assert!(g.check_typefun(tf).is_ok());
    }

    #[test]
    fn nothing_is_bottom() {
        let g = Globals::default();
        let ctx = Ctx::new();
        let nothing = QType::plain(KType::Prim(PrimTy::Nothing));
        assert!(is_subtype(&g, &ctx, &nothing, &QType::plain(KType::named("File"))));
    }
}
