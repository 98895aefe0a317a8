//! Recursive descent parser for `.cap` sources.
//!
//! Blocks are brace-delimited and statements are separated by `;` or by a
//! line break: a call or index postfix only continues an expression when it
//! starts on the same line.

use crate::diag::{Code, Diagnostic};
use crate::span::Span;

use super::ast::*;
use super::lexer::tokenize;
use super::token::{Token, TokenKind};

pub fn parse_program(file: &str, src: &str) -> Result<Program, Diagnostic> {
    let tokens = tokenize(file, src)?;
    Parser { tokens, pos: 0 }.program()
}

pub fn parse_type_str(file: &str, src: &str) -> Result<SType, Diagnostic> {
    let tokens = tokenize(file, src)?;
    let mut p = Parser { tokens, pos: 0 };
    let t = p.ty()?;
    p.expect(TokenKind::Eof)?;
    Ok(t)
}

pub fn parse_expr_str(file: &str, src: &str) -> Result<Expr, Diagnostic> {
    let tokens = tokenize(file, src)?;
    let mut p = Parser { tokens, pos: 0 };
    let e = p.expr()?;
    p.expect(TokenKind::Eof)?;
    Ok(e)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_at(&self, n: usize) -> &Token {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)]
    }

    fn prev_span(&self) -> Span {
        self.tokens[self.pos.saturating_sub(1)].span.clone()
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos.min(self.tokens.len() - 1)].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn at(&self, kind: &TokenKind) -> bool {
        &self.peek().kind == kind
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.at(kind) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(Diagnostic::new(Code::E_PARSE, self.peek().span.clone(), msg.into()))
    }

    fn expect(&mut self, kind: TokenKind) -> PResult<Token> {
        if self.at(&kind) {
            Ok(self.bump())
        } else {
            self.err(format!("expected {}, found {}", kind.describe(), self.peek().kind.describe()))
        }
    }

    fn ident(&mut self) -> PResult<(String, Span)> {
        match self.peek().kind.clone() {
            TokenKind::Ident(name) => {
                let t = self.bump();
                Ok((name, t.span))
            }
            other => self.err(format!("expected identifier, found {}", other.describe())),
        }
    }

    /// True when the current token begins on the same line the previous one ends.
    fn same_line(&self) -> bool {
        if self.pos == 0 {
            return true;
        }
        self.tokens[self.pos - 1].span.end_line == self.peek().span.start_line
    }

    // -- declarations -------------------------------------------------------

    fn program(&mut self) -> PResult<Program> {
        let start = self.peek().span.clone();
        let mut decls = Vec::new();
        loop {
            while self.eat(&TokenKind::Semi) {}
            if self.at(&TokenKind::Eof) {
                break;
            }
            decls.push(self.decl()?);
        }
        let span = if decls.is_empty() {
            start
        } else {
            decls[0].span().to(decls.last().unwrap().span())
        };
        Ok(Program { decls, span })
    }

    fn decl(&mut self) -> PResult<Decl> {
        match &self.peek().kind {
            TokenKind::KwClass => Ok(Decl::Class(self.class_decl()?)),
            TokenKind::KwType => self.type_alias(),
            TokenKind::KwTypefun => Ok(Decl::TypeFun(self.typefun_decl()?)),
            TokenKind::KwDef | TokenKind::KwExtern => Ok(Decl::Def(self.def_decl()?)),
            TokenKind::KwExtension => Ok(Decl::Extension(self.extension_decl()?)),
            TokenKind::KwVal | TokenKind::KwImplicit => Ok(Decl::Val(self.val_bind()?)),
            other => self.err(format!("expected a declaration, found {}", other.describe())),
        }
    }

    fn class_decl(&mut self) -> PResult<ClassDecl> {
        let start = self.expect(TokenKind::KwClass)?.span;
        let name = if self.at(&TokenKind::ColonColon) {
            self.bump();
            "::".to_string()
        } else {
            self.ident()?.0
        };
        let params = self.opt_typarams()?;
        let parent = if self.eat(&TokenKind::KwExtends) { Some(self.ty()?) } else { None };
        let mut members = Vec::new();
        let mut end = self.prev_span();
        if self.at(&TokenKind::LBrace) {
            self.bump();
            loop {
                while self.eat(&TokenKind::Semi) {}
                match &self.peek().kind {
                    TokenKind::RBrace => break,
                    TokenKind::KwType => {
                        let tspan = self.bump().span;
                        let (mname, _) = self.ident()?;
                        let tps = self.opt_typarams()?;
                        members.push(ClassMember::TypeMember {
                            name: mname,
                            params: tps,
                            span: tspan.to(&self.prev_span()),
                        });
                    }
                    TokenKind::KwClass => members.push(ClassMember::Nested(self.class_decl()?)),
                    other => {
                        return self.err(format!(
                            "expected `type`, `class`, or `}}` in class body, found {}",
                            other.describe()
                        ))
                    }
                }
            }
            end = self.expect(TokenKind::RBrace)?.span;
        }
        Ok(ClassDecl { name, params, parent, members, span: start.to(&end) })
    }

    fn type_alias(&mut self) -> PResult<Decl> {
        let start = self.expect(TokenKind::KwType)?.span;
        let (name, _) = self.ident()?;
        let params = self.opt_typarams()?;
        self.expect(TokenKind::Eq)?;
        let body = self.ty()?;
        let span = start.to(&body.span);
        Ok(Decl::TypeAlias { name, params, body, span })
    }

    fn typefun_decl(&mut self) -> PResult<TypeFunDecl> {
        let start = self.expect(TokenKind::KwTypefun)?.span;
        let (name, _) = self.ident()?;
        let params = self.opt_typarams()?;
        let bound = if self.eat(&TokenKind::SubtypeOf) { Some(self.ty()?) } else { None };
        self.expect(TokenKind::Eq)?;
        self.expect(TokenKind::KwMatch)?;
        let (scrutinee, _) = self.ident()?;
        self.expect(TokenKind::LBrace)?;
        let mut cases = Vec::new();
        while !self.at(&TokenKind::RBrace) {
            while self.eat(&TokenKind::Semi) {}
            if self.at(&TokenKind::RBrace) {
                break;
            }
            let cstart = self.expect(TokenKind::KwCase)?.span;
            let (con, _) = self.ident()?;
            let mut vars = Vec::new();
            if self.eat(&TokenKind::LBracket) {
                loop {
                    vars.push(self.ident()?.0);
                    if !self.eat(&TokenKind::Comma) {
                        break;
                    }
                }
                self.expect(TokenKind::RBracket)?;
            }
            self.expect(TokenKind::Arrow)?;
            let body = self.ty()?;
            let span = cstart.to(&body.span);
            cases.push(TypeFunCase { con, vars, body, span });
        }
        let end = self.expect(TokenKind::RBrace)?.span;
        Ok(TypeFunDecl { name, params, bound, scrutinee, cases, span: start.to(&end) })
    }

    fn def_decl(&mut self) -> PResult<DefDecl> {
        let is_extern = self.eat(&TokenKind::KwExtern);
        let start = self.expect(TokenKind::KwDef)?.span;
        let (name, _) = self.ident()?;
        let typarams = self.opt_typarams()?;
        let mut clauses = Vec::new();
        while self.at(&TokenKind::LParen) {
            self.bump();
            let using = self.eat(&TokenKind::KwUsing);
            let mut params = Vec::new();
            while !self.at(&TokenKind::RParen) {
                let (pname, pspan) = self.ident()?;
                if pname.is_empty() {
                    return self.err("missing parameter name");
                }
                self.expect(TokenKind::Colon)?;
                let by_name = self.eat(&TokenKind::Arrow);
                let ty = self.ty()?;
                let span = pspan.to(&ty.span);
                if params.iter().any(|p: &Param| p.name == pname) {
                    return Err(Diagnostic::new(
                        Code::E_PARSE,
                        span,
                        format!("duplicate parameter name `{pname}`"),
                    ));
                }
                params.push(Param { name: pname, ty, by_name, span });
                if !self.eat(&TokenKind::Comma) {
                    break;
                }
            }
            self.expect(TokenKind::RParen)?;
            clauses.push(ParamClause { using, params });
        }
        let ret = if self.eat(&TokenKind::Colon) { Some(self.ty()?) } else { None };
        let (extern_prim, body) = if self.eat(&TokenKind::Eq) {
            if is_extern {
                match self.peek().kind.clone() {
                    TokenKind::Str(prim) => {
                        self.bump();
                        (Some(prim), None)
                    }
                    _ => return self.err("extern def body must be a primitive name string"),
                }
            } else {
                (None, Some(self.expr()?))
            }
        } else if is_extern {
            return self.err("extern def requires `= \"prim.name\"`");
        } else {
            return self.err("def requires a body");
        };
        let span = start.to(&self.prev_span());
        Ok(DefDecl { name, extern_prim, typarams, clauses, ret, body, span })
    }

    fn extension_decl(&mut self) -> PResult<ExtensionDecl> {
        let start = self.expect(TokenKind::KwExtension)?.span;
        self.expect(TokenKind::LParen)?;
        let (binder, _) = self.ident()?;
        self.expect(TokenKind::Colon)?;
        let recv_ty = self.ty()?;
        self.expect(TokenKind::RParen)?;
        self.expect(TokenKind::LBrace)?;
        let mut defs = Vec::new();
        loop {
            while self.eat(&TokenKind::Semi) {}
            if self.at(&TokenKind::RBrace) {
                break;
            }
            defs.push(self.def_decl()?);
        }
        let end = self.expect(TokenKind::RBrace)?.span;
        Ok(ExtensionDecl { binder, recv_ty, defs, span: start.to(&end) })
    }

    fn val_bind(&mut self) -> PResult<ValBind> {
        let implicit = self.eat(&TokenKind::KwImplicit);
        let start = self.expect(TokenKind::KwVal)?.span;
        let (name, _) = self.ident()?;
        let ty = if self.eat(&TokenKind::Colon) { Some(self.ty()?) } else { None };
        self.expect(TokenKind::Eq)?;
        let init = self.expr()?;
        let span = start.to(&init.span);
        Ok(ValBind { implicit, name, ty, init, span })
    }

    fn opt_typarams(&mut self) -> PResult<Vec<TyParam>> {
        let mut out = Vec::new();
        if !self.eat(&TokenKind::LBracket) {
            return Ok(out);
        }
        loop {
            let (name, span) = self.ident()?;
            let qual_param =
                if self.eat(&TokenKind::Hat) { Some(self.ident()?.0) } else { None };
            let bound = if self.eat(&TokenKind::SubtypeOf) { Some(self.ty()?) } else { None };
            let span = span.to(&self.prev_span());
            out.push(TyParam { name, qual_param, bound, span });
            if !self.eat(&TokenKind::Comma) {
                break;
            }
        }
        self.expect(TokenKind::RBracket)?;
        Ok(out)
    }

    // -- types --------------------------------------------------------------

    fn arrow_kind(&self) -> Option<Arrow> {
        match self.peek().kind {
            TokenKind::Arrow => Some(Arrow::Plain),
            TokenKind::ImplicitArrow => Some(Arrow::Implicit),
            TokenKind::KillArrow => Some(Arrow::Kill),
            TokenKind::QKillArrow => Some(Arrow::ImplicitKill),
            TokenKind::SigmaArrow => Some(Arrow::Sigma),
            TokenKind::TransitionArrow => Some(Arrow::Transition),
            _ => None,
        }
    }

    pub(crate) fn ty(&mut self) -> PResult<SType> {
        // Dependent binder form: `(c: S) => T`.
        if self.at(&TokenKind::LParen) {
            if let TokenKind::Ident(_) = self.peek_at(1).kind {
                if self.peek_at(2).kind == TokenKind::Colon {
                    let start = self.bump().span; // (
                    let (binder, _) = self.ident()?;
                    self.expect(TokenKind::Colon)?;
                    let param = self.ty()?;
                    self.expect(TokenKind::RParen)?;
                    let Some(arrow) = self.arrow_kind() else {
                        return self.err("expected an arrow after dependent binder");
                    };
                    self.bump();
                    let result = self.ty()?;
                    let span = start.to(&result.span);
                    return Ok(self.kill_postfix(SType {
                        kind: STypeKind::Fun {
                            binder: Some(binder),
                            arrow,
                            param: Box::new(param),
                            result: Box::new(result),
                        },
                        span,
                    })?);
                }
            }
        }
        let lhs = self.cons_ty()?;
        if let Some(arrow) = self.arrow_kind() {
            self.bump();
            let result = self.ty()?;
            let span = lhs.span.to(&result.span);
            let node = SType {
                kind: STypeKind::Fun {
                    binder: None,
                    arrow,
                    param: Box::new(lhs),
                    result: Box::new(result),
                },
                span,
            };
            return self.kill_postfix(node);
        }
        self.kill_postfix(lhs)
    }

    fn kill_postfix(&mut self, mut node: SType) -> PResult<SType> {
        while self.at(&TokenKind::At) {
            self.bump();
            let (kw, _) = self.ident()?;
            if kw != "kill" {
                return self.err("expected `kill` after `@`");
            }
            self.expect(TokenKind::LParen)?;
            let mut kills = Vec::new();
            while !self.at(&TokenKind::RParen) {
                let (name, _) = self.ident()?;
                kills.push(if name == "FUN" { KillItem::Fun } else { KillItem::Var(name) });
                if !self.eat(&TokenKind::Comma) {
                    break;
                }
            }
            let end = self.expect(TokenKind::RParen)?.span;
            let span = node.span.to(&end);
            node = SType { kind: STypeKind::KillAnnot { base: Box::new(node), kills }, span };
        }
        Ok(node)
    }

    fn cons_ty(&mut self) -> PResult<SType> {
        let lhs = self.postfix_ty()?;
        if self.at(&TokenKind::ColonColon) {
            self.bump();
            let rhs = self.cons_ty()?;
            let span = lhs.span.to(&rhs.span);
            return Ok(SType {
                kind: STypeKind::Cons { head: Box::new(lhs), tail: Box::new(rhs) },
                span,
            });
        }
        Ok(lhs)
    }

    fn ty_args(&mut self) -> PResult<Vec<SType>> {
        self.expect(TokenKind::LBracket)?;
        let mut args = Vec::new();
        while !self.at(&TokenKind::RBracket) {
            args.push(self.ty()?);
            if !self.eat(&TokenKind::Comma) {
                break;
            }
        }
        self.expect(TokenKind::RBracket)?;
        Ok(args)
    }

    fn postfix_ty(&mut self) -> PResult<SType> {
        let start = self.peek().span.clone();
        let mut node = match self.peek().kind.clone() {
            TokenKind::LParen => {
                self.bump();
                let inner = self.ty()?;
                self.expect(TokenKind::RParen)?;
                inner
            }
            TokenKind::Int(n) => {
                let span = self.bump().span;
                SType { kind: STypeKind::Nat(n), span }
            }
            TokenKind::Ident(_) => {
                // Dotted path chain, resolved to Named / Member / Singleton.
                let mut segs = vec![self.ident()?.0];
                let mut singleton = false;
                while self.at(&TokenKind::Dot) {
                    match self.peek_at(1).kind.clone() {
                        TokenKind::KwType => {
                            self.bump();
                            self.bump();
                            singleton = true;
                            break;
                        }
                        TokenKind::Ident(_) => {
                            self.bump();
                            segs.push(self.ident()?.0);
                        }
                        _ => break,
                    }
                }
                let span = start.to(&self.prev_span());
                if singleton {
                    SType { kind: STypeKind::Singleton { path: segs }, span }
                } else if segs.len() == 1 {
                    let head = segs.pop().unwrap();
                    if self.at(&TokenKind::LBracket) {
                        let args = self.ty_args()?;
                        let span = start.to(&self.prev_span());
                        SType { kind: STypeKind::Applied { head, args }, span }
                    } else if self.at(&TokenKind::LBrace) && head == "Sigma" {
                        self.refined_ty(head, start.clone())?
                    } else {
                        SType { kind: STypeKind::Named(head), span }
                    }
                } else {
                    let member = segs.pop().unwrap();
                    let args = if self.at(&TokenKind::LBracket) { self.ty_args()? } else { Vec::new() };
                    let span = start.to(&self.prev_span());
                    SType { kind: STypeKind::Member { path: segs, member, args }, span }
                }
            }
            other => return self.err(format!("expected a type, found {}", other.describe())),
        };
        loop {
            match self.peek().kind.clone() {
                TokenKind::Hat => {
                    self.bump();
                    let qual = if self.at(&TokenKind::LBrace) {
                        self.bump();
                        let mut vars = Vec::new();
                        while !self.at(&TokenKind::RBrace) {
                            vars.push(self.ident()?.0);
                            if !self.eat(&TokenKind::Comma) {
                                break;
                            }
                        }
                        self.expect(TokenKind::RBrace)?;
                        SQual { vars, fresh_only: false }
                    } else {
                        SQual { vars: Vec::new(), fresh_only: true }
                    };
                    let span = start.to(&self.prev_span());
                    node = SType { kind: STypeKind::Qualified { base: Box::new(node), qual }, span };
                }
                TokenKind::Hash => {
                    self.bump();
                    let (member, mspan) = self.ident()?;
                    let span = node.span.to(&mspan);
                    node = SType { kind: STypeKind::Project(Box::new(node), member), span };
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn refined_ty(&mut self, base: String, start: Span) -> PResult<SType> {
        self.expect(TokenKind::LBrace)?;
        let mut members = Vec::new();
        loop {
            while self.eat(&TokenKind::Semi) {}
            if self.at(&TokenKind::RBrace) {
                break;
            }
            self.expect(TokenKind::KwType)?;
            let (name, _) = self.ident()?;
            self.expect(TokenKind::Eq)?;
            let ty = self.ty()?;
            members.push((name, ty));
        }
        let end = self.expect(TokenKind::RBrace)?.span;
        Ok(SType { kind: STypeKind::Refined { base, members }, span: start.to(&end) })
    }

    // -- expressions --------------------------------------------------------

    /// Look ahead from a `(` to decide whether it opens a lambda parameter list.
    fn lparen_starts_lambda(&self) -> bool {
        debug_assert!(self.at(&TokenKind::LParen));
        let mut depth = 0usize;
        let mut i = self.pos;
        loop {
            match &self.tokens[i].kind {
                TokenKind::LParen => depth += 1,
                TokenKind::RParen => {
                    depth -= 1;
                    if depth == 0 {
                        return self.tokens.get(i + 1).map(|t| t.kind == TokenKind::Arrow).unwrap_or(false);
                    }
                }
                TokenKind::Eof => return false,
                _ => {}
            }
            i += 1;
            if i >= self.tokens.len() {
                return false;
            }
        }
    }

    pub(crate) fn expr(&mut self) -> PResult<Expr> {
        let start = self.peek().span.clone();
        match self.peek().kind.clone() {
            TokenKind::KwIf => {
                self.bump();
                self.expect(TokenKind::LParen)?;
                let cond = self.expr()?;
                self.expect(TokenKind::RParen)?;
                let then_branch = self.expr()?;
                let else_branch = if self.eat(&TokenKind::KwElse) {
                    Some(Box::new(self.expr()?))
                } else {
                    None
                };
                let span = start.to(&self.prev_span());
                Ok(Expr {
                    kind: ExprKind::If {
                        cond: Box::new(cond),
                        then_branch: Box::new(then_branch),
                        else_branch,
                    },
                    span,
                })
            }
            TokenKind::KwThrow => {
                self.bump();
                let inner = self.expr()?;
                let span = start.to(&inner.span);
                Ok(Expr { kind: ExprKind::Throw(Box::new(inner)), span })
            }
            TokenKind::KwSummon => {
                self.bump();
                self.expect(TokenKind::LBracket)?;
                let ty = self.ty()?;
                let end = self.expect(TokenKind::RBracket)?.span;
                Ok(Expr { kind: ExprKind::Summon(ty), span: start.to(&end) })
            }
            TokenKind::KwNew => self.sigma_new(),
            TokenKind::Ident(name) if self.peek_at(1).kind == TokenKind::Arrow => {
                // Bare single-parameter lambda: `x => e`.
                let (_, pspan) = self.ident()?;
                self.bump(); // =>
                let body = self.expr()?;
                let span = start.to(&body.span);
                Ok(Expr {
                    kind: ExprKind::Lambda {
                        params: vec![LambdaParam { name, ty: None, span: pspan }],
                        body: Box::new(body),
                    },
                    span,
                })
            }
            TokenKind::LParen if self.lparen_starts_lambda() => self.lambda(),
            _ => self.postfix_expr(),
        }
    }

    fn lambda(&mut self) -> PResult<Expr> {
        let start = self.expect(TokenKind::LParen)?.span;
        let mut params = Vec::new();
        while !self.at(&TokenKind::RParen) {
            let (name, pspan) = self.ident()?;
            let ty = if self.eat(&TokenKind::Colon) { Some(self.ty()?) } else { None };
            let span = pspan.to(&self.prev_span());
            params.push(LambdaParam { name, ty, span });
            if !self.eat(&TokenKind::Comma) {
                break;
            }
        }
        self.expect(TokenKind::RParen)?;
        self.expect(TokenKind::Arrow)?;
        let body = self.expr()?;
        let span = start.to(&body.span);
        Ok(Expr { kind: ExprKind::Lambda { params, body: Box::new(body) }, span })
    }

    fn sigma_new(&mut self) -> PResult<Expr> {
        let start = self.expect(TokenKind::KwNew)?.span;
        let (base, _) = self.ident()?;
        if base != "Sigma" {
            return self.err("only `new Sigma { ... }` is supported");
        }
        self.expect(TokenKind::LBrace)?;
        let mut members = Vec::new();
        let mut a = None;
        let mut b = None;
        loop {
            while self.eat(&TokenKind::Semi) {}
            match self.peek().kind.clone() {
                TokenKind::RBrace => break,
                TokenKind::KwType => {
                    self.bump();
                    let (name, _) = self.ident()?;
                    self.expect(TokenKind::Eq)?;
                    members.push((name, self.ty()?));
                }
                TokenKind::KwVal => {
                    self.bump();
                    let (name, _) = self.ident()?;
                    self.expect(TokenKind::Eq)?;
                    let e = self.expr()?;
                    match name.as_str() {
                        "a" => a = Some(e),
                        "b" => b = Some(e),
                        _ => return self.err("Sigma literal fields must be `a` and `b`"),
                    }
                }
                other => {
                    return self.err(format!(
                        "expected `type`, `val`, or `}}` in Sigma literal, found {}",
                        other.describe()
                    ))
                }
            }
        }
        let end = self.expect(TokenKind::RBrace)?.span;
        let span = start.to(&end);
        let (Some(a), Some(b)) = (a, b) else {
            return Err(Diagnostic::new(Code::E_PARSE, span, "Sigma literal requires fields `a` and `b`"));
        };
        Ok(Expr { kind: ExprKind::SigmaNew { members, a: Box::new(a), b: Box::new(b) }, span })
    }

    fn call_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(TokenKind::LParen)?;
        let mut args = Vec::new();
        while !self.at(&TokenKind::RParen) {
            args.push(self.expr()?);
            if !self.eat(&TokenKind::Comma) {
                break;
            }
        }
        self.expect(TokenKind::RParen)?;
        Ok(args)
    }

    fn postfix_expr(&mut self) -> PResult<Expr> {
        let start = self.peek().span.clone();
        let mut node = self.atom()?;
        loop {
            match self.peek().kind.clone() {
                TokenKind::Dot => {
                    self.bump();
                    let (name, _) = self.ident()?;
                    let type_args = if self.at(&TokenKind::LBracket) && self.same_line() {
                        self.ty_args()?
                    } else {
                        Vec::new()
                    };
                    let args = if self.at(&TokenKind::LParen) && self.same_line() {
                        Some(self.call_args()?)
                    } else {
                        None
                    };
                    let span = start.to(&self.prev_span());
                    node = Expr {
                        kind: ExprKind::MethodCall { recv: Box::new(node), name, type_args, args },
                        span,
                    };
                }
                TokenKind::LBracket if self.same_line() => {
                    let type_args = self.ty_args()?;
                    if self.at(&TokenKind::LParen) && self.same_line() {
                        let args = self.call_args()?;
                        let span = start.to(&self.prev_span());
                        node = Expr {
                            kind: ExprKind::Apply { func: Box::new(node), type_args, args: Some(args) },
                            span,
                        };
                    } else {
                        // Type-applied value, e.g. `mySummon[File]` passed as an argument.
                        let span = start.to(&self.prev_span());
                        node = Expr {
                            kind: ExprKind::Apply { func: Box::new(node), type_args, args: None },
                            span,
                        };
                    }
                }
                TokenKind::LParen if self.same_line() => {
                    let args = self.call_args()?;
                    let span = start.to(&self.prev_span());
                    node = Expr {
                        kind: ExprKind::Apply { func: Box::new(node), type_args: Vec::new(), args: Some(args) },
                        span,
                    };
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn atom(&mut self) -> PResult<Expr> {
        let start = self.peek().span.clone();
        match self.peek().kind.clone() {
            TokenKind::Int(n) => {
                let span = self.bump().span;
                Ok(Expr { kind: ExprKind::Int(n), span })
            }
            TokenKind::Str(s) => {
                let span = self.bump().span;
                Ok(Expr { kind: ExprKind::Str(s), span })
            }
            TokenKind::KwTrue => {
                let span = self.bump().span;
                Ok(Expr { kind: ExprKind::Bool(true), span })
            }
            TokenKind::KwFalse => {
                let span = self.bump().span;
                Ok(Expr { kind: ExprKind::Bool(false), span })
            }
            TokenKind::Ident(name) => {
                let span = self.bump().span;
                Ok(Expr { kind: ExprKind::Var(name), span })
            }
            TokenKind::LParen => {
                self.bump();
                if self.at(&TokenKind::RParen) {
                    let end = self.bump().span;
                    return Ok(Expr { kind: ExprKind::Unit, span: start.to(&end) });
                }
                let inner = self.expr()?;
                if self.eat(&TokenKind::Colon) {
                    let ty = self.ty()?;
                    let end = self.expect(TokenKind::RParen)?.span;
                    return Ok(Expr {
                        kind: ExprKind::Ascribe { expr: Box::new(inner), ty },
                        span: start.to(&end),
                    });
                }
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            TokenKind::LBrace => self.block(),
            other => self.err(format!("expected an expression, found {}", other.describe())),
        }
    }

    fn block(&mut self) -> PResult<Expr> {
        let start = self.expect(TokenKind::LBrace)?.span;
        let mut stmts = Vec::new();
        loop {
            while self.eat(&TokenKind::Semi) {}
            match self.peek().kind.clone() {
                TokenKind::RBrace => break,
                TokenKind::KwVal | TokenKind::KwImplicit => stmts.push(Stmt::Val(self.val_bind()?)),
                TokenKind::KwDef | TokenKind::KwExtern => stmts.push(Stmt::Def(self.def_decl()?)),
                _ => stmts.push(Stmt::Expr(self.expr()?)),
            }
        }
        let end = self.expect(TokenKind::RBrace)?.span;
        Ok(Expr { kind: ExprKind::Block(stmts), span: start.to(&end) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn by_name_param_with_fun_kill() {
        let p = parse_program(
            "t.cap",
            "extern def cFuture[T](body: => T @kill(FUN)): Future[T] = \"task.spawn\"",
        )
        .unwrap();
        let Decl::Def(d) = &p.decls[0] else { panic!() };
        assert!(d.clauses[0].params[0].by_name);
        let STypeKind::KillAnnot { kills, .. } = &d.clauses[0].params[0].ty.kind else {
            panic!("expected kill annot, got {:?}", d.clauses[0].params[0].ty.kind)
        };
        assert_eq!(kills, &[KillItem::Fun]);
    }

    #[test]
    fn singleton_ascription() {
        let p = parse_program("t.cap", "val x = { val f: sigma.a.type = sigma.a; f }").unwrap();
        let Decl::Val(v) = &p.decls[0] else { panic!() };
        let ExprKind::Block(stmts) = &v.init.kind else { panic!() };
        let Stmt::Val(inner) = &stmts[0] else { panic!() };
        let Some(SType { kind: STypeKind::Singleton { path }, .. }) = &inner.ty else {
            panic!("expected singleton ascription: {:?}", inner.ty)
        };
        assert_eq!(path, &vec!["sigma".to_string(), "a".to_string()]);
    }

    #[test]
    fn missing_param_name_is_parse_error() {
        let err = parse_program("t.cap", "def f(: Int): Int = 1").unwrap_err();
        assert_eq!(err.code, Code::E_PARSE);
    }

    #[test]
    fn transition_arrow_type() {
        let t = parse_type_str("t.cap", "f.IsClosed ?=!>? f.IsOpen").unwrap();
        let STypeKind::Fun { arrow, .. } = t.kind else { panic!() };
        assert_eq!(arrow, Arrow::Transition);
    }

    #[test]
    fn cons_right_associative() {
        let t = parse_type_str("t.cap", "A :: B :: TNil").unwrap();
        let STypeKind::Cons { tail, .. } = t.kind else { panic!() };
        assert!(matches!(tail.kind, STypeKind::Cons { .. }));
    }

    #[test]
    fn newline_ends_statement_before_call() {
        let e = parse_expr_str("t.cap", "{ open(f)\n (x) => x }").unwrap();
        let ExprKind::Block(stmts) = e.kind else { panic!() };
        assert_eq!(stmts.len(), 2);
    }

    #[test]
    fn spans_nest() {
        let p = parse_program("t.cap", "def f(x: Int): Int = { x }").unwrap();
        let Decl::Def(d) = &p.decls[0] else { panic!() };
        let body = d.body.as_ref().unwrap();
        assert!(d.span.contains(&body.span));
    }
}
