use std::sync::Arc;

use crate::diag::{Code, Diagnostic};
use crate::span::Span;

use super::token::{Token, TokenKind};

pub struct Lexer<'a> {
    file: Arc<str>,
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

fn keyword(s: &str) -> Option<TokenKind> {
    Some(match s {
        "class" => TokenKind::KwClass,
        "extends" => TokenKind::KwExtends,
        "type" => TokenKind::KwType,
        "typefun" => TokenKind::KwTypefun,
        "match" => TokenKind::KwMatch,
        "case" => TokenKind::KwCase,
        "def" => TokenKind::KwDef,
        "extern" => TokenKind::KwExtern,
        "extension" => TokenKind::KwExtension,
        "val" => TokenKind::KwVal,
        "implicit" => TokenKind::KwImplicit,
        "using" => TokenKind::KwUsing,
        "summon" => TokenKind::KwSummon,
        "new" => TokenKind::KwNew,
        "if" => TokenKind::KwIf,
        "else" => TokenKind::KwElse,
        "true" => TokenKind::KwTrue,
        "false" => TokenKind::KwFalse,
        "throw" => TokenKind::KwThrow,
        _ => return None,
    })
}

impl<'a> Lexer<'a> {
    pub fn new(file: Arc<str>, src: &'a str) -> Lexer<'a> {
        Lexer { file, src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek_at(&self, n: usize) -> Option<u8> {
        self.src.get(self.pos + n).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn here(&self) -> (u32, u32) {
        (self.line, self.col)
    }

    fn span_from(&self, start: (u32, u32)) -> Span {
        Span::new(self.file.clone(), start.0, start.1, self.line, self.col)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(b' ') | Some(b'\t') | Some(b'\r') | Some(b'\n') => {
                    self.bump();
                }
                Some(b'/') if self.peek_at(1) == Some(b'/') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    /// Try to lex one of the multi-character operators at the current
    /// position, longest match first.
    fn operator(&mut self) -> Option<TokenKind> {
        const OPS: &[(&str, fn() -> TokenKind)] = &[
            ("?=!>?", || TokenKind::TransitionArrow),
            ("?=!>", || TokenKind::QKillArrow),
            ("?<=", || TokenKind::SigmaArrow),
            ("?=>", || TokenKind::ImplicitArrow),
            ("=!>", || TokenKind::KillArrow),
            ("=>", || TokenKind::Arrow),
            ("<:", || TokenKind::SubtypeOf),
            ("::", || TokenKind::ColonColon),
        ];
        for (text, make) in OPS {
            let bytes = text.as_bytes();
            if self.src[self.pos..].starts_with(bytes) {
                for _ in 0..bytes.len() {
                    self.bump();
                }
                return Some(make());
            }
        }
        None
    }

    pub fn tokenize(mut self) -> Result<Vec<Token>, Diagnostic> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let start = self.here();
            let Some(c) = self.peek() else {
                out.push(Token { kind: TokenKind::Eof, span: self.span_from(start) });
                return Ok(out);
            };
            if let Some(kind) = self.operator() {
                out.push(Token { kind, span: self.span_from(start) });
                continue;
            }
            let kind = match c {
                b'(' => {
                    self.bump();
                    TokenKind::LParen
                }
                b')' => {
                    self.bump();
                    TokenKind::RParen
                }
                b'{' => {
                    self.bump();
                    TokenKind::LBrace
                }
                b'}' => {
                    self.bump();
                    TokenKind::RBrace
                }
                b'[' => {
                    self.bump();
                    TokenKind::LBracket
                }
                b']' => {
                    self.bump();
                    TokenKind::RBracket
                }
                b'.' => {
                    self.bump();
                    TokenKind::Dot
                }
                b',' => {
                    self.bump();
                    TokenKind::Comma
                }
                b';' => {
                    self.bump();
                    TokenKind::Semi
                }
                b':' => {
                    self.bump();
                    TokenKind::Colon
                }
                b'=' => {
                    self.bump();
                    TokenKind::Eq
                }
                b'^' => {
                    self.bump();
                    TokenKind::Hat
                }
                b'@' => {
                    self.bump();
                    TokenKind::At
                }
                b'#' => {
                    self.bump();
                    TokenKind::Hash
                }
                b'"' => {
                    self.bump();
                    let mut text = String::new();
                    loop {
                        match self.bump() {
                            Some(b'"') => break,
                            Some(b'\\') => match self.bump() {
                                Some(b'n') => text.push('\n'),
                                Some(b't') => text.push('\t'),
                                Some(b'\\') => text.push('\\'),
                                Some(b'"') => text.push('"'),
                                other => {
                                    return Err(Diagnostic::new(
                                        Code::E_PARSE,
                                        self.span_from(start),
                                        format!(
                                            "invalid escape sequence `\\{}`",
                                            other.map(|c| c as char).unwrap_or(' ')
                                        ),
                                    ))
                                }
                            },
                            Some(b'\n') | None => {
                                return Err(Diagnostic::new(
                                    Code::E_PARSE,
                                    self.span_from(start),
                                    "unterminated string literal",
                                ))
                            }
                            Some(c) => text.push(c as char),
                        }
                    }
                    TokenKind::Str(text)
                }
                b'0'..=b'9' => {
                    let mut n: i64 = 0;
                    while let Some(c @ b'0'..=b'9') = self.peek() {
                        n = n * 10 + (c - b'0') as i64;
                        self.bump();
                    }
                    TokenKind::Int(n)
                }
                c if c.is_ascii_alphabetic() || c == b'_' || c == b'$' => {
                    let begin = self.pos;
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' || c == b'$' {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    let text = std::str::from_utf8(&self.src[begin..self.pos]).unwrap();
                    keyword(text).unwrap_or_else(|| TokenKind::Ident(text.to_string()))
                }
                other => {
                    self.bump();
                    return Err(Diagnostic::new(
                        Code::E_PARSE,
                        self.span_from(start),
                        format!("illegal character (byte 0x{other:02x})"),
                    ));
                }
            };
            out.push(Token { kind, span: self.span_from(start) });
        }
    }
}

/// Tokenize a whole source file. Comments are discarded; every token carries a span.
pub fn tokenize(file: &str, src: &str) -> Result<Vec<Token>, Diagnostic> {
    Lexer::new(Arc::from(file), src).tokenize()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize("t.cap", src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn keyword_ident_split() {
        assert_eq!(
            kinds("val f = 1"),
            vec![
                TokenKind::KwVal,
                TokenKind::Ident("f".into()),
                TokenKind::Eq,
                TokenKind::Int(1),
                TokenKind::Eof
            ]
        );
    }

    #[test]
    fn arrows_and_hat() {
        let ks = kinds("f.IsOpen^ ?=!> f.IsClosed^");
        assert!(ks.contains(&TokenKind::Hat));
        assert!(ks.contains(&TokenKind::QKillArrow));
    }

    #[test]
    fn transition_arrow_longest_match() {
        assert_eq!(kinds("?=!>?")[0], TokenKind::TransitionArrow);
        assert_eq!(kinds("?=!> x")[0], TokenKind::QKillArrow);
    }

    #[test]
    fn illegal_char() {
        let err = tokenize("t.cap", "\u{0000}").unwrap_err();
        assert_eq!(err.code, Code::E_PARSE);
        assert_eq!(err.span.start_line, 1);
    }

    #[test]
    fn comments_discarded() {
        assert_eq!(kinds("// hi\n1"), vec![TokenKind::Int(1), TokenKind::Eof]);
    }

    #[test]
    fn tokens_cover_input_with_spans() {
        let toks = tokenize("t.cap", "val x =\n  open(f)").unwrap();
        for t in &toks {
            assert!(t.span.start_line >= 1 && t.span.start_col >= 1);
        }
        let open = toks.iter().find(|t| t.kind == TokenKind::Ident("open".into())).unwrap();
        assert_eq!((open.span.start_line, open.span.start_col), (2, 3));
    }
}
