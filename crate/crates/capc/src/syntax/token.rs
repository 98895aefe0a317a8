use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    // literals and identifiers
    Ident(String),
    Int(i64),
    Str(String),
    // keywords
    KwClass,
    KwExtends,
    KwType,
    KwTypefun,
    KwMatch,
    KwCase,
    KwDef,
    KwExtern,
    KwExtension,
    KwVal,
    KwImplicit,
    KwUsing,
    KwSummon,
    KwNew,
    KwIf,
    KwElse,
    KwTrue,
    KwFalse,
    KwThrow,
    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Dot,
    Comma,
    Colon,
    Semi,
    Eq,
    Hat,
    At,
    Hash,
    ColonColon,
    SubtypeOf, // <:
    // arrows
    Arrow,           // =>
    ImplicitArrow,   // ?=>
    KillArrow,       // =!>
    QKillArrow,      // ?=!>
    SigmaArrow,      // ?<=
    TransitionArrow, // ?=!>?
    Eof,
}

impl TokenKind {
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Int(n) => format!("integer `{n}`"),
            TokenKind::Str(_) => "string literal".to_string(),
            TokenKind::KwClass => "`class`".to_string(),
            TokenKind::KwExtends => "`extends`".to_string(),
            TokenKind::KwType => "`type`".to_string(),
            TokenKind::KwTypefun => "`typefun`".to_string(),
            TokenKind::KwMatch => "`match`".to_string(),
            TokenKind::KwCase => "`case`".to_string(),
            TokenKind::KwDef => "`def`".to_string(),
            TokenKind::KwExtern => "`extern`".to_string(),
            TokenKind::KwExtension => "`extension`".to_string(),
            TokenKind::KwVal => "`val`".to_string(),
            TokenKind::KwImplicit => "`implicit`".to_string(),
            TokenKind::KwUsing => "`using`".to_string(),
            TokenKind::KwSummon => "`summon`".to_string(),
            TokenKind::KwNew => "`new`".to_string(),
            TokenKind::KwIf => "`if`".to_string(),
            TokenKind::KwElse => "`else`".to_string(),
            TokenKind::KwTrue => "`true`".to_string(),
            TokenKind::KwFalse => "`false`".to_string(),
            TokenKind::KwThrow => "`throw`".to_string(),
            TokenKind::LParen => "`(`".to_string(),
            TokenKind::RParen => "`)`".to_string(),
            TokenKind::LBrace => "`{`".to_string(),
            TokenKind::RBrace => "`}`".to_string(),
            TokenKind::LBracket => "`[`".to_string(),
            TokenKind::RBracket => "`]`".to_string(),
            TokenKind::Dot => "`.`".to_string(),
            TokenKind::Comma => "`,`".to_string(),
            TokenKind::Colon => "`:`".to_string(),
            TokenKind::Semi => "`;`".to_string(),
            TokenKind::Eq => "`=`".to_string(),
            TokenKind::Hat => "`^`".to_string(),
            TokenKind::At => "`@`".to_string(),
            TokenKind::Hash => "`#`".to_string(),
            TokenKind::ColonColon => "`::`".to_string(),
            TokenKind::SubtypeOf => "`<:`".to_string(),
            TokenKind::Arrow => "`=>`".to_string(),
            TokenKind::ImplicitArrow => "`?=>`".to_string(),
            TokenKind::KillArrow => "`=!>`".to_string(),
            TokenKind::QKillArrow => "`?=!>`".to_string(),
            TokenKind::SigmaArrow => "`?<=`".to_string(),
            TokenKind::TransitionArrow => "`?=!>?`".to_string(),
            TokenKind::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}
