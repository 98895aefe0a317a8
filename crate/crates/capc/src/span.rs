use std::fmt;
use std::sync::Arc;

/// A half-open region of a source file, 1-based lines and columns.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub file: Arc<str>,
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl Span {
    pub fn new(file: Arc<str>, start_line: u32, start_col: u32, end_line: u32, end_col: u32) -> Span {
        debug_assert!((start_line, start_col) <= (end_line, end_col));
        Span { file, start_line, start_col, end_line, end_col }
    }

    pub fn point(file: Arc<str>, line: u32, col: u32) -> Span {
        Span::new(file, line, col, line, col)
    }

    /// Smallest span covering both `self` and `other`.
    pub fn to(&self, other: &Span) -> Span {
        let (sl, sc) = std::cmp::min(
            (self.start_line, self.start_col),
            (other.start_line, other.start_col),
        );
        let (el, ec) = std::cmp::max((self.end_line, self.end_col), (other.end_line, other.end_col));
        Span::new(self.file.clone(), sl, sc, el, ec)
    }

    pub fn contains(&self, other: &Span) -> bool {
        (self.start_line, self.start_col) <= (other.start_line, other.start_col)
            && (other.end_line, other.end_col) <= (self.end_line, self.end_col)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.start_line, self.start_col)
    }
}
