//! Surface syntax tree produced by the parser. Every node carries a span.

use crate::span::Span;

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub decls: Vec<Decl>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decl {
    Class(ClassDecl),
    /// Top-level transparent alias: `type X[..] = T`.
    TypeAlias { name: String, params: Vec<TyParam>, body: SType, span: Span },
    TypeFun(TypeFunDecl),
    Def(DefDecl),
    Extension(ExtensionDecl),
    Val(ValBind),
}

impl Decl {
    pub fn span(&self) -> &Span {
        match self {
            Decl::Class(c) => &c.span,
            Decl::TypeAlias { span, .. } => span,
            Decl::TypeFun(t) => &t.span,
            Decl::Def(d) => &d.span,
            Decl::Extension(e) => &e.span,
            Decl::Val(v) => &v.span,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDecl {
    pub name: String,
    pub params: Vec<TyParam>,
    pub parent: Option<SType>,
    pub members: Vec<ClassMember>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassMember {
    /// Abstract type member: `type Elems[T <: TList]`.
    TypeMember { name: String, params: Vec<TyParam>, span: Span },
    Nested(ClassDecl),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TyParam {
    pub name: String,
    /// `[T^q]` declares qualifier parameter `q` alongside `T`.
    pub qual_param: Option<String>,
    pub bound: Option<SType>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeFunDecl {
    pub name: String,
    pub params: Vec<TyParam>,
    pub bound: Option<SType>,
    pub scrutinee: String,
    pub cases: Vec<TypeFunCase>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeFunCase {
    pub con: String,
    pub vars: Vec<String>,
    pub body: SType,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefDecl {
    pub name: String,
    /// `extern def ... = "prim.name"` binds the body to an interpreter primitive.
    pub extern_prim: Option<String>,
    pub typarams: Vec<TyParam>,
    pub clauses: Vec<ParamClause>,
    pub ret: Option<SType>,
    pub body: Option<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamClause {
    pub using: bool,
    pub params: Vec<Param>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: SType,
    /// `x: => T` call-by-name parameter.
    pub by_name: bool,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionDecl {
    pub binder: String,
    pub recv_ty: SType,
    pub defs: Vec<DefDecl>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValBind {
    pub implicit: bool,
    pub name: String,
    pub ty: Option<SType>,
    pub init: Expr,
    pub span: Span,
}

// ---------------------------------------------------------------------------
// Types

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrow {
    /// `=>`
    Plain,
    /// `?=>`
    Implicit,
    /// `=!>`
    Kill,
    /// `?=!>`
    ImplicitKill,
    /// `?<=` (Sigma: left operand is the capability type B, right the value type A)
    Sigma,
    /// `?=!>?`
    Transition,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KillItem {
    Var(String),
    /// The `FUN` self-reference marker.
    Fun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SQual {
    /// Empty with `fresh_only` set is the bare `^` freshness marker.
    pub vars: Vec<String>,
    pub fresh_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SType {
    pub kind: STypeKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum STypeKind {
    Named(String),
    /// `Table#Row`
    Project(Box<SType>, String),
    /// `f.IsOpen`, `s.a.IsClosed`, `tree.Elems[L]`
    Member { path: Vec<String>, member: String, args: Vec<SType> },
    /// `s.a.type`
    Singleton { path: Vec<String> },
    /// `Send[T, P]`
    Applied { head: String, args: Vec<SType> },
    /// `E :: L` (right-associative)
    Cons { head: Box<SType>, tail: Box<SType> },
    /// Arrow types; `binder` present for dependent forms `(c: S) => T`.
    Fun { binder: Option<String>, arrow: Arrow, param: Box<SType>, result: Box<SType> },
    /// `T^` / `T^{x,y}`
    Qualified { base: Box<SType>, qual: SQual },
    /// `T @kill(c, FUN)`
    KillAnnot { base: Box<SType>, kills: Vec<KillItem> },
    /// Type-level integer literal, e.g. `Var[0]`.
    Nat(i64),
    /// `Sigma { type A = T1; type B = T2 }`
    Refined { base: String, members: Vec<(String, SType)> },
}

// ---------------------------------------------------------------------------
// Expressions

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaParam {
    pub name: String,
    pub ty: Option<SType>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Unit,
    Bool(bool),
    Int(i64),
    Str(String),
    Var(String),
    Block(Vec<Stmt>),
    If { cond: Box<Expr>, then_branch: Box<Expr>, else_branch: Option<Box<Expr>> },
    Lambda { params: Vec<LambdaParam>, body: Box<Expr> },
    /// `args: None` is a bare type application like `mySummon[File]` with no
    /// value-argument list; `Some(vec![])` is an explicit nullary call `f()`.
    Apply { func: Box<Expr>, type_args: Vec<SType>, args: Option<Vec<Expr>> },
    /// `recv.name(args)`; `args: None` is a bare field selection like `sigma.a`.
    MethodCall { recv: Box<Expr>, name: String, type_args: Vec<SType>, args: Option<Vec<Expr>> },
    Summon(SType),
    Ascribe { expr: Box<Expr>, ty: SType },
    Throw(Box<Expr>),
    /// `new Sigma { type A = ..; type B = ..; val a = ..; val b = .. }`
    SigmaNew { members: Vec<(String, SType)>, a: Box<Expr>, b: Box<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Val(ValBind),
    Def(DefDecl),
    Expr(Expr),
}

impl Stmt {
    pub fn span(&self) -> &Span {
        match self {
            Stmt::Val(v) => &v.span,
            Stmt::Def(d) => &d.span,
            Stmt::Expr(e) => &e.span,
        }
    }
}
