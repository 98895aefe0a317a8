//! Lexer, parser, and surface AST.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod pretty;
pub mod token;

pub use parser::{parse_expr_str, parse_program, parse_type_str};
